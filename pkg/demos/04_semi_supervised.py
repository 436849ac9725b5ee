"""Semi-supervised pipeline: pseudo-labels for the unlabeled accents.

Setup mirrored from the deployment story: transcripts exist only for the
reference accent (accent 0); the other accents are audio-only. Pipeline:

  1. train a labeled-only recognizer on the transcribed accent ("w/o PL"),
  2. let it pseudo-label the untranscribed accents,
  3. adversarially pre-train on ALL audio (no transcripts needed),
  4. fine-tune jointly (F2) on real + pseudo transcripts ("w/ PL").

The scoreboard splits token error rate into the labeled accent ("group")
and the unlabeled rest, where the pre-trained invariant front end plus
pseudo-labels should pay off. Shortened budgets (~5 min CPU); the shipped
semi_supervised.recipe runs the full pipeline.
"""
from dataclasses import replace
from pathlib import Path

from accentasr.corpus import (SyntheticSpec, generate_synthetic_corpus,
                              load_manifest, restrict_transcripts, split_corpus)
from accentasr.decode import decode_corpus
from accentasr.evaluate import evaluate
from accentasr.model import Architecture
from accentasr.training import TrainConfig, pseudo_label, train

out = Path("demo_runs/semi_supervised")
manifest = generate_synthetic_corpus(SyntheticSpec(), 360, out / "corpus/all.tsv")
train_m, test_m = split_corpus(manifest, 1 / 6, seed=0)

labeled_only = restrict_transcripts(train_m, {0})
labeled_only.save(out / "corpus/labeled_only.tsv")
n_lab = sum(1 for r in labeled_only.records if r.transcript is not None)
print(f"transcripts kept for accent 0 only: {n_lab} labeled / "
      f"{len(labeled_only.records) - n_lab} audio-only")

arch = replace(Architecture(), specific_hidden=4)


def group_ter(bundle):
    hyps = decode_corpus(bundle, test_m, beam_size=10)
    texts = {uid: bundle.inventory.decode(h.tokens) for uid, h in hyps.items()}
    rep = evaluate(test_m, texts, group_accents={0})
    return rep.group.wer, rep.rest.wer


print("\n1. labeled-only recognizer (sees accent-0 transcripts only)...")
wo_cfg = TrainConfig(mode="b1", seed=0, arch=arch, epochs_pretrain=16,
                     batch_frames=256, lr_pretrain=5e-4)
wo = train(wo_cfg, labeled_only, out / "wo_pl")

print("2. pseudo-labeling the audio-only accents...")
pl_man, counts = pseudo_label(wo.bundle, labeled_only, out / "corpus/pseudo.tsv",
                              beam_size=10)
print(f"   {counts['labeled']} real + {counts['pseudo']} pseudo transcripts "
      f"({counts['excluded']} empty decodes dropped)")

print("3. adversarial pre-training on all audio (no transcripts)...")
pre_cfg = TrainConfig(mode="pretrain", seed=0, arch=arch, epochs_pretrain=6,
                      batch_frames=256, lr_pretrain=5e-4, d_steps=5)
train(pre_cfg, train_m, out / "pretrain")

print("4. joint fine-tune (F2) on real + pseudo transcripts...")
w_cfg = TrainConfig(mode="f2", seed=0, arch=arch, epochs_finetune=10,
                    batch_frames=256, lr_finetune=2.5e-4, d_steps=5)
w = train(w_cfg, pl_man, out / "w_pl", init_path=out / "pretrain/final.ckpt")

g0, r0 = group_ter(wo.bundle)
g1, r1 = group_ter(w.bundle)
print("\n== token error rate (labeled accent | unlabeled accents) ==")
print(f"  w/o PL (labeled-only): {g0:.3f} | {r0:.3f}")
print(f"  w/ PL  (F2 + pseudo):  {g1:.3f} | {r1:.3f}")
print("\nthe unlabeled-accent column is the one the pipeline exists for.")
