"""Adversarial pre-training pulls accent out of the invariant branch.

Two encoders read the same frames: the invariant branch plays a min-max
game against an accent discriminator (it wants the discriminator at
chance), while the specific branch is trained to classify accent. A shared
reconstructor forces the pair to keep enough information to rebuild the
input frames. The linear-probe scoreboard below is the whole story: accent
should be easy to read from raw features and from the specific branch, and
hard to read from the invariant branch.

Runs a shortened pre-training (~2 min CPU); the shipped pretrain.cfg runs
the full 15 epochs.
"""
from dataclasses import replace
from pathlib import Path

from accentasr.corpus import SyntheticSpec, generate_synthetic_corpus, split_corpus
from accentasr.evaluate import ProbeConfig, collect_embeddings, probe_accent
from accentasr.model import Architecture
from accentasr.training import TrainConfig, train

out = Path("demo_runs/disentanglement")
manifest = generate_synthetic_corpus(SyntheticSpec(), 360, out / "corpus/all.tsv")
train_m, test_m = split_corpus(manifest, 1 / 6, seed=0)

# Desk-scale shape: the specific branch is kept narrow (accent identity
# needs very few dimensions), so reconstruction must route content through
# the invariant branch while the discriminator pushes accent out of it.
arch = replace(Architecture(), specific_hidden=4)
cfg = TrainConfig(mode="pretrain", seed=0, arch=arch, epochs_pretrain=8,
                  batch_frames=256, lr_pretrain=5e-4, d_steps=5)
print("pre-training (adversarial, no transcripts used)...")
state = train(cfg, train_m, out / "pretrain")

print("\n== linear accent probes on held-out utterances ==")
scores = {}
for which in ("raw", "specific", "invariant"):
    rows, labels, _ = collect_embeddings(state.bundle, test_m, which)
    r = probe_accent(rows, labels, ProbeConfig())
    scores[which] = r
    print(f"  {which:>9}: accent accuracy {r.accuracy:.3f} "
          f"(chance {r.chance:.3f})")

inv, spec, raw = scores["invariant"], scores["specific"], scores["raw"]
print("\nreading the scoreboard:")
print(f"  raw features leak accent freely        ({raw.accuracy:.3f})")
print(f"  the specific branch concentrates it    ({spec.accuracy:.3f})")
print(f"  the invariant branch hides it          ({inv.accuracy:.3f}, "
      f"chance {inv.chance:.3f})")
print("the invariant branch is what the downstream recognizer consumes.")
