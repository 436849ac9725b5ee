"""Scoring and diagnostics: token error rates, linear accent probes,
embedding export, and teacher-forced validation accuracy.

Error rates are computed over whitespace token units (the synthetic corpus's
"words"); the scorer is unit-agnostic. Aggregates pool raw error counts, so
the overall rate always equals (total errors) / (total reference tokens)
rather than an average of per-accent rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tape
from .corpus import CorpusManifest, write_features
from .errors import ValidationError
from .features import stack_frames
from .model import ModelBundle, build_targets
from .nn import module_rng
from .tape import Tensor


# --------------------------------------------------------------------------
# Edit-distance scoring


@dataclass
class WerCounts:
    """One alignment's error breakdown against a reference."""

    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_tokens: int = 0
    utterances: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.ref_tokens == 0:
            raise ValidationError("error rate undefined for empty reference")
        return self.errors / self.ref_tokens

    def add(self, other: "WerCounts") -> None:
        self.substitutions += other.substitutions
        self.insertions += other.insertions
        self.deletions += other.deletions
        self.ref_tokens += other.ref_tokens
        self.utterances += other.utterances


def wer(ref: list[str], hyp: list[str]) -> WerCounts:
    """Levenshtein alignment minimizing substitutions + insertions +
    deletions. Among cost-equal alignments the backtrace prefers
    substitution/match over deletion over insertion (deterministic split;
    the total error count is alignment-independent)."""
    if not ref:
        raise ValidationError("reference may not be empty")
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dist[i, j] = min(dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                             dist[i - 1, j] + 1,
                             dist[i, j - 1] + 1)
    counts = WerCounts(ref_tokens=n, utterances=1)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.substitutions += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            counts.deletions += 1
            i -= 1
        else:
            counts.insertions += 1
            j -= 1
    return counts


# --------------------------------------------------------------------------
# Corpus-level evaluation


@dataclass
class EvalReport:
    """Per-accent and pooled error counts for one hypothesis set.

    ``group`` / ``rest`` split the accents into the transcript-labeled subset
    and the remainder when ``group_accents`` is given (the semi-supervised
    reading of the table rows); both stay None otherwise.
    """

    per_accent: dict[str, WerCounts]
    overall: WerCounts
    group: WerCounts | None = None
    rest: WerCounts | None = None
    group_accents: tuple[int, ...] | None = None
    failed: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        def row(c: WerCounts) -> dict:
            return {"wer": c.wer, "errors": c.errors, "ref_tokens": c.ref_tokens,
                    "substitutions": c.substitutions, "insertions": c.insertions,
                    "deletions": c.deletions, "utterances": c.utterances}

        out = {"per_accent": {name: row(c) for name, c in self.per_accent.items()},
               "overall": row(self.overall), "failed": sorted(self.failed),
               "warnings": list(self.warnings), "units": "whitespace tokens"}
        if self.group is not None:
            out["group"] = row(self.group)
            out["rest"] = row(self.rest)
            out["group_accents"] = list(self.group_accents)
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n",
                              encoding="utf-8")


def _strip_accent_tokens(tokens: list[str]) -> list[str]:
    return [t for t in tokens if not t.startswith("<acc:")]


def evaluate(refs: CorpusManifest, hyps: dict[str, str],
             group_accents=None) -> EvalReport:
    """Score hypotheses against a reference manifest.

    Every reference record must carry a transcript. A missing or empty
    hypothesis scores as all deletions and the id lands in ``failed``.
    Accent tokens (``<acc:...>``, emitted by accent-token-trained models)
    are stripped from hypotheses before alignment. Results do not depend on
    record order. Accents with no test utterances are omitted with a warning.
    """
    per: dict[int, WerCounts] = {}
    failed: list[str] = []
    for rec in sorted(refs.records, key=lambda r: r.utt_id):
        if not rec.transcript:
            raise ValidationError(f"reference record '{rec.utt_id}' has no transcript")
        hyp_text = hyps.get(rec.utt_id, "")
        if rec.utt_id not in hyps or not hyp_text.strip():
            failed.append(rec.utt_id)
        counts = wer(rec.transcript.split(), _strip_accent_tokens(hyp_text.split()))
        per.setdefault(rec.accent_id, WerCounts()).add(counts)

    warnings = []
    per_accent: dict[str, WerCounts] = {}
    for accent_id, name in enumerate(refs.accent_names):
        if accent_id in per:
            per_accent[name] = per[accent_id]
        else:
            warnings.append(f"accent '{name}' has no test utterances; omitted")
    overall = WerCounts()
    for counts in per.values():
        overall.add(counts)
    report = EvalReport(per_accent, overall, failed=failed, warnings=warnings)

    if group_accents is not None:
        group_set = set(int(a) for a in group_accents)
        for accent in group_set:
            if not 0 <= accent < refs.num_accents:
                raise ValidationError(f"group accent {accent} out of range")
        group, rest = WerCounts(), WerCounts()
        for accent_id, counts in per.items():
            (group if accent_id in group_set else rest).add(counts)
        report.group, report.rest = group, rest
        report.group_accents = tuple(sorted(group_set))
    return report


# --------------------------------------------------------------------------
# Embedding collection and linear probing


def collect_embeddings(bundle: ModelBundle, manifest: CorpusManifest, which: str,
                       pooled: bool = False):
    """Frame-level (or mean-pooled per-utterance) rows for probing.

    ``which``: "invariant" / "specific" branch outputs or "raw" stacked
    features. Returns (rows (N, D) float64, accent labels (N,), utt ids).
    """
    if which not in ("invariant", "specific", "raw"):
        raise ValidationError(f"unknown embedding source '{which}'")
    rows, labels, ids = [], [], []
    with tape.no_grad():
        for rec in manifest.records:
            feats = stack_frames(manifest.feature_array(rec), bundle.arch.frame_stack)
            if which == "raw":
                emb = feats
            elif which == "invariant":
                emb = bundle.encode_invariant(Tensor(feats[None])).data[0]
            else:
                emb = bundle.encode_specific(Tensor(feats[None])).data[0]
            if pooled:
                rows.append(emb.mean(axis=0, keepdims=True))
                labels.append(rec.accent_id)
                ids.append(rec.utt_id)
            else:
                rows.append(emb)
                labels.extend([rec.accent_id] * emb.shape[0])
                ids.extend([rec.utt_id] * emb.shape[0])
    if not rows:
        raise ValidationError("manifest has no records to embed")
    return np.concatenate(rows, axis=0), np.array(labels, dtype=np.int64), ids


def export_embeddings(bundle: ModelBundle, manifest: CorpusManifest, which: str,
                      out_path: str | Path) -> int:
    """Write mean-pooled per-utterance embeddings in the feature-file layout
    (rows = utterances) plus an ``<out>.labels`` sidecar of
    ``id<TAB>accent_id`` lines; returns the row count. Same checkpoint, same
    bytes."""
    rows, labels, ids = collect_embeddings(bundle, manifest, which, pooled=True)
    out_path = Path(out_path)
    write_features(out_path, rows.astype(np.float32))
    lines = [f"{utt_id}\t{accent}" for utt_id, accent in zip(ids, labels)]
    Path(str(out_path) + ".labels").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows.shape[0]


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 400
    lr: float = 1.0
    l2: float = 1e-4
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must be in (0, 1)")
        if self.steps < 1 or self.lr <= 0 or self.l2 < 0:
            raise ValidationError("probe needs steps >= 1, lr > 0, l2 >= 0")


@dataclass(frozen=True)
class ProbeResult:
    accuracy: float
    chance: float
    classes: int
    train_rows: int
    test_rows: int


def probe_accent(rows: np.ndarray, labels: np.ndarray,
                 cfg: ProbeConfig = ProbeConfig()) -> ProbeResult:
    """Linear softmax probe on frozen rows, evaluated on a held-out split.

    Multinomial logistic regression by full-batch gradient descent from a
    zero init on standardized inputs (deterministic given the split seed).
    ``chance`` is the best constant-prediction accuracy on the held-out rows
    (the max class prior).
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] != labels.shape[0]:
        raise ValidationError(f"rows {rows.shape} and labels {labels.shape} disagree")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValidationError("probe needs at least 2 classes present")
    num_classes = int(labels.max()) + 1

    # Stratified split so every class with >= 2 rows appears on both sides.
    rng = module_rng(cfg.seed, "probe.split")
    train_idx, test_idx = [], []
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        if idx.size < 2:
            train_idx.append(idx)
            continue
        k = int(round((1.0 - cfg.train_fraction) * idx.size))
        k = min(max(k, 1), idx.size - 1)
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.array([], dtype=np.int64)
    if test.size == 0:
        raise ValidationError("no class has enough rows for a held-out split")

    mean = rows[train].mean(axis=0)
    std = rows[train].std(axis=0)
    std[std < 1e-8] = 1.0
    x_train = np.hstack([(rows[train] - mean) / std, np.ones((train.size, 1))])
    x_test = np.hstack([(rows[test] - mean) / std, np.ones((test.size, 1))])
    y = np.zeros((train.size, num_classes))
    y[np.arange(train.size), labels[train]] = 1.0

    w = np.zeros((x_train.shape[1], num_classes))
    for _ in range(cfg.steps):
        logits = x_train @ w
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grad = x_train.T @ (p - y) / train.size + cfg.l2 * w
        w -= cfg.lr * grad

    pred = np.argmax(x_test @ w, axis=1)
    accuracy = float((pred == labels[test]).mean())
    counts = np.bincount(labels[test], minlength=num_classes)
    chance = float(counts.max() / test.size)
    return ProbeResult(accuracy, chance, int(classes.size), int(train.size),
                       int(test.size))


# --------------------------------------------------------------------------
# Validation metrics


def discriminator_accuracy(bundle: ModelBundle, manifest: CorpusManifest) -> float:
    """Frame-level accuracy of the invariant-branch discriminator; the
    adversarial-balance diagnostic tracked during pre-training (at chance
    means the invariant branch leaks nothing the discriminator can use)."""
    correct = total = 0
    with tape.no_grad():
        for rec in manifest.records:
            feats = stack_frames(manifest.feature_array(rec), bundle.arch.frame_stack)
            h_inv = bundle.encode_invariant(Tensor(feats[None]))
            probs = bundle.invariant_discriminator(h_inv).data[0]
            correct += int((np.argmax(probs, axis=-1) == rec.accent_id).sum())
            total += probs.shape[0]
    if total == 0:
        raise ValidationError("no records to score")
    return correct / total


def validation_accuracy(bundle: ModelBundle, manifest: CorpusManifest) -> float:
    """Teacher-forced next-token top-1 accuracy over all prediction steps of
    all transcribed records."""
    correct = total = 0
    accented = bundle.arch.accent_conditioned_encoder
    with tape.no_grad():
        for rec in manifest.records:
            if not rec.transcript:
                continue
            feats = stack_frames(manifest.feature_array(rec), bundle.arch.frame_stack)
            targets = np.array([build_targets(bundle.inventory, rec.transcript,
                                              rec.accent_id)])
            h_inv = bundle.encode_invariant(Tensor(feats[None]))
            enc = bundle.recognizer_encode(
                h_inv, accents=np.array([rec.accent_id]) if accented else None)
            posts, _ = bundle.recognize_teacher_forced(enc, np.ones((1, feats.shape[0])),
                                                       targets)
            pred = np.argmax(posts.data[0], axis=-1)
            gold = targets[0, 1:]
            correct += int((pred == gold).sum())
            total += gold.size
    if total == 0:
        raise ValidationError("no transcribed records to validate on")
    return correct / total
