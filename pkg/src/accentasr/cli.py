"""Command-line entry point.

One executable, subcommands for each pipeline step::

    accentasr corpus gen --utts 720 --out corpus/all.tsv
    accentasr train pretrain --corpus corpus/train.tsv --out runs/pre
    accentasr decode --model runs/pre/final.ckpt --corpus corpus/test.tsv --out hyps.txt
    accentasr evaluate --refs corpus/test.tsv --hyps hyps.txt --report report.json
    accentasr recipe run recipes/supervised.recipe --out runs/supervised

Every failure prints a single ``error: <code>: <message>`` line to stderr and
exits nonzero. Status messages avoid absolute paths so that logs from
identical runs compare equal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import reports as report_mod
from .config import load_train_config
from .corpus import (CorpusManifest, SyntheticSpec, generate_synthetic_corpus,
                     load_manifest, relativize, restrict_transcripts, split_corpus)
from .decode import decode_corpus, write_hypotheses, read_hypotheses
from .errors import AccentAsrError, ValidationError
from .evaluate import (ProbeConfig, collect_embeddings, evaluate,
                       export_embeddings, probe_accent)
from .model import ModelBundle
from .training import MODES, pseudo_label, train


class _Parser(argparse.ArgumentParser):
    """Single-line usage errors instead of argparse's two-line format."""

    def error(self, message):
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def _int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip() != ""]
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def _save_manifest_rebased(manifest: CorpusManifest, out_path: Path) -> None:
    """Save with feature paths rewritten relative to the new manifest's
    directory, so the copy resolves no matter where it lands."""
    from dataclasses import replace
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if manifest.root is None:
        raise ValidationError("manifest has no root directory to rebase from")
    records = [replace(r, feature_path=relativize(manifest.root / r.feature_path,
                                                  out_path.parent))
               for r in manifest.records]
    rebased = CorpusManifest(records, list(manifest.accent_names),
                             manifest.feature_dim,
                             list(manifest.units) if manifest.units else None)
    rebased.save(out_path)


def _load_bundle(path: str) -> ModelBundle:
    bundle, _ = ModelBundle.load(path)
    return bundle


# --------------------------------------------------------------------------
# Subcommand handlers


def _cmd_corpus_gen(args) -> int:
    spec = SyntheticSpec(num_accents=args.accents, vocab_size=args.vocab,
                         feature_dim=args.feature_dim,
                         tokens_per_utt=tuple(args.tokens),
                         frames_per_token=tuple(args.frames),
                         transform_strength=args.transform_strength,
                         merger_fraction=args.merger_fraction,
                         merger_depth=args.merger_depth,
                         noise=args.noise, seed=args.seed)
    manifest = generate_synthetic_corpus(spec, args.utts, args.out)
    print(f"generated {len(manifest.records)} utterances, "
          f"{manifest.num_accents} accents, feature dim {manifest.feature_dim}")
    return 0


def _cmd_corpus_split(args) -> int:
    manifest = load_manifest(args.manifest)
    train_man, valid_man = split_corpus(manifest, args.valid_fraction, args.seed)
    _save_manifest_rebased(train_man, Path(args.train))
    _save_manifest_rebased(valid_man, Path(args.valid))
    print(f"split {len(manifest.records)} utterances into "
          f"{len(train_man.records)} train / {len(valid_man.records)} valid")
    return 0


def _cmd_corpus_restrict(args) -> int:
    manifest = load_manifest(args.manifest)
    restricted = restrict_transcripts(manifest, set(args.keep_accents))
    _save_manifest_rebased(restricted, Path(args.out))
    kept = sum(1 for r in restricted.records if r.transcript)
    print(f"kept transcripts for {kept} of {len(restricted.records)} utterances")
    return 0


def _cmd_train(args) -> int:
    cfg = load_train_config(args.mode, args.config, args.seed)
    manifest = load_manifest(args.corpus)
    valid = load_manifest(args.valid) if args.valid else None
    state = train(cfg, manifest, args.out, valid=valid,
                  init_path=args.init, resume=args.resume)
    print(f"trained {args.mode}: {state.epoch} epochs, {state.step} steps; "
          f"wrote final.ckpt")
    return 0


def _cmd_pseudo_label(args) -> int:
    bundle = _load_bundle(args.model)
    manifest = load_manifest(args.corpus)
    _, counts = pseudo_label(bundle, manifest, args.out,
                             beam_size=args.beam, max_len=args.max_len)
    print(f"pseudo-labeled: {counts['labeled']} labeled kept, "
          f"{counts['pseudo']} pseudo, {counts['excluded']} excluded")
    return 0


def _cmd_decode(args) -> int:
    bundle = _load_bundle(args.model)
    manifest = load_manifest(args.corpus)
    hyps = decode_corpus(bundle, manifest, beam_size=args.beam,
                         max_len=args.max_len,
                         length_normalize=args.length_normalize)
    texts = {uid: bundle.inventory.decode(h.tokens) for uid, h in hyps.items()}
    write_hypotheses(texts, args.out)
    incomplete = sum(1 for h in hyps.values() if not h.complete)
    print(f"decoded {len(texts)} utterances (beam {args.beam}, "
          f"{incomplete} incomplete)")
    return 0


def _cmd_evaluate(args) -> int:
    refs = load_manifest(args.refs)
    hyps = read_hypotheses(args.hyps)
    group = set(args.group) if args.group is not None else None
    report = evaluate(refs, hyps, group_accents=group)
    report.save(args.report)
    line = f"overall WER {report.overall.wer:.4f} ({report.overall.errors} errors / " \
           f"{report.overall.ref_tokens} tokens)"
    if group is not None:
        line += f"; group {report.group.wer:.4f}, rest {report.rest.wer:.4f}"
    print(line)
    for w in report.warnings:
        print(f"warning: {w}")
    return 0


def _cmd_probe(args) -> int:
    bundle = _load_bundle(args.model)
    manifest = load_manifest(args.corpus)
    rows, labels, _ = collect_embeddings(bundle, manifest, args.which,
                                         pooled=args.pooled)
    result = probe_accent(rows, labels, ProbeConfig(steps=args.steps,
                                                    seed=args.seed))
    doc = {"which": args.which, "pooled": args.pooled,
           "accuracy": round(result.accuracy, 6), "chance": round(result.chance, 6),
           "classes": result.classes, "train_rows": result.train_rows,
           "test_rows": result.test_rows}
    line = json.dumps(doc, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def _cmd_export_embeddings(args) -> int:
    bundle = _load_bundle(args.model)
    manifest = load_manifest(args.corpus)
    n = export_embeddings(bundle, manifest, args.which, args.out)
    print(f"exported {n} pooled {args.which} embeddings")
    return 0


def _parse_labeled(pairs: list[str], what: str) -> list[tuple[str, str]]:
    out = []
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"{what} must be NAME=PATH, got {pair!r}")
        name, path = pair.split("=", 1)
        if not name or not path:
            raise ValidationError(f"{what} must be NAME=PATH, got {pair!r}")
        out.append((name, path))
    return out


def _cmd_report(args) -> int:
    if args.format not in report_mod.FORMATS:
        raise ValidationError(f"unknown report format {args.format!r}; "
                              f"choose from {', '.join(report_mod.FORMATS)}")
    labeled = _parse_labeled(args.inputs, "report input")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.format == "plot":
        if len(labeled) != 1:
            raise ValidationError("plot format takes exactly one NAME=TRAINLOG input")
        points = report_mod.curve_from_log(labeled[0][1])
        out.write_text(report_mod.render_curve_delimited(points), encoding="utf-8")
        if args.image:
            report_mod.render_curve_image(points, args.image)
        print(f"wrote learning curve with {len(points)} points")
        return 0
    table = report_mod.table_from_reports(
        [(name, report_mod.load_report(path)) for name, path in labeled])
    if args.format == "text-table":
        rendered = report_mod.render_text(table)
    else:
        rendered = report_mod.render_delimited(table)
    out.write_text(rendered, encoding="utf-8")
    print(f"wrote {args.format} with {len(table.rows)} rows")
    return 0


def _cmd_recipe_run(args) -> int:
    from .recipes import run_recipe
    results = run_recipe(args.recipe, args.out, seed=args.seed)
    ran = sum(1 for r in results if r.status == "ran")
    print(f"recipe complete: {ran} stages ran, {len(results) - ran} skipped")
    return 0


# --------------------------------------------------------------------------
# Parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="accentasr",
                     description="Accent-invariant pre-training and seq2seq "
                                 "recognition, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="generate, split, restrict corpora")
    corpus_sub = corpus.add_subparsers(dest="corpus_command", required=True)

    spec_defaults = SyntheticSpec()
    gen = corpus_sub.add_parser("gen", help="synthesize an accented corpus")
    gen.add_argument("--utts", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--accents", type=int, default=spec_defaults.num_accents)
    gen.add_argument("--vocab", type=int, default=spec_defaults.vocab_size)
    gen.add_argument("--feature-dim", type=int, default=spec_defaults.feature_dim)
    gen.add_argument("--tokens", type=int, nargs=2, default=spec_defaults.tokens_per_utt,
                     metavar=("MIN", "MAX"))
    gen.add_argument("--frames", type=int, nargs=2, default=spec_defaults.frames_per_token,
                     metavar=("MIN", "MAX"))
    gen.add_argument("--transform-strength", type=float,
                     default=spec_defaults.transform_strength)
    gen.add_argument("--merger-fraction", type=float,
                     default=spec_defaults.merger_fraction)
    gen.add_argument("--merger-depth", type=float,
                     default=spec_defaults.merger_depth)
    gen.add_argument("--noise", type=float, default=spec_defaults.noise)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=_cmd_corpus_gen)

    split = corpus_sub.add_parser("split", help="accent-stratified train/valid split")
    split.add_argument("--manifest", required=True)
    split.add_argument("--valid-fraction", type=float, required=True)
    split.add_argument("--train", required=True)
    split.add_argument("--valid", required=True)
    split.add_argument("--seed", type=int, default=0)
    split.set_defaults(func=_cmd_corpus_split)

    restrict = corpus_sub.add_parser(
        "restrict", help="drop transcripts outside the labeled accents")
    restrict.add_argument("--manifest", required=True)
    restrict.add_argument("--keep-accents", type=_int_list, required=True)
    restrict.add_argument("--out", required=True)
    restrict.set_defaults(func=_cmd_corpus_restrict)

    tr = sub.add_parser("train", help="pretrain, fine-tune, or train a baseline")
    tr.add_argument("mode", choices=MODES)
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", default=None)
    tr.add_argument("--valid", default=None)
    tr.add_argument("--init", default=None,
                    help="checkpoint to start from (fine-tuning)")
    tr.add_argument("--resume", action="store_true",
                    help="continue from <out>/last.ckpt")
    tr.add_argument("--seed", type=int, default=None)
    tr.set_defaults(func=_cmd_train)

    pl = sub.add_parser("pseudo-label", help="decode untranscribed utterances "
                                             "into a new manifest")
    pl.add_argument("--model", required=True)
    pl.add_argument("--corpus", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--beam", type=int, default=20)
    pl.add_argument("--max-len", type=int, default=None)
    pl.set_defaults(func=_cmd_pseudo_label)

    dec = sub.add_parser("decode", help="beam-decode a corpus to a hypothesis file")
    dec.add_argument("--model", required=True)
    dec.add_argument("--corpus", required=True)
    dec.add_argument("--out", required=True)
    dec.add_argument("--beam", type=int, default=20)
    dec.add_argument("--max-len", type=int, default=None)
    dec.add_argument("--length-normalize", action="store_true")
    dec.set_defaults(func=_cmd_decode)

    ev = sub.add_parser("evaluate", help="score hypotheses against references")
    ev.add_argument("--refs", required=True)
    ev.add_argument("--hyps", required=True)
    ev.add_argument("--report", required=True)
    ev.add_argument("--group", type=_int_list, default=None,
                    help="labeled-group accent ids for a group/rest split")
    ev.set_defaults(func=_cmd_evaluate)

    pr = sub.add_parser("probe", help="linear accent probe on embeddings")
    pr.add_argument("--model", required=True)
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--which", choices=("invariant", "specific", "raw"),
                    required=True)
    pr.add_argument("--pooled", action="store_true")
    pr.add_argument("--steps", type=int, default=400)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=_cmd_probe)

    ex = sub.add_parser("export-embeddings",
                        help="write mean-pooled embeddings + labels sidecar")
    ex.add_argument("--model", required=True)
    ex.add_argument("--corpus", required=True)
    ex.add_argument("--which", choices=("invariant", "specific", "raw"),
                    required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=_cmd_export_embeddings)

    rep = sub.add_parser("report", help="emit tables or learning curves")
    rep.add_argument("--format", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--image", default=None,
                     help="also render a PNG (plot format)")
    rep.add_argument("inputs", nargs="+", metavar="NAME=PATH")
    rep.set_defaults(func=_cmd_report)

    rec = sub.add_parser("recipe", help="run a multi-stage experiment recipe")
    rec_sub = rec.add_subparsers(dest="recipe_command", required=True)
    run = rec_sub.add_parser("run")
    run.add_argument("recipe")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.set_defaults(func=_cmd_recipe_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    try:
        return args.func(args)
    except AccentAsrError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
