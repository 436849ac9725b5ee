"""Synthetic accented corpus, feature files, and manifests.

The synthetic generator emits utterances whose frames are per-token prototype
vectors repeated for a sampled duration, pushed through a per-accent affine
transform plus bias, with additive noise. Accent 0 is always the identity
accent (no transform, no bias); it doubles as the labeled "reference" accent
in the semi-supervised recipes. Non-reference accents can partially merge
some tokens into others (see ``SyntheticSpec``), so reading those tokens
requires inferring the accent from context the way real accent variation
does. Ground-truth frame alignments are stored in a sidecar so probes can be
scored against known content.

File formats (stable, documented in README):

* Feature file: magic ``AIPF``, uint32 T, uint32 F, then T*F float32, all
  little-endian.
* Manifest: UTF-8 lines, tab-separated ``id  feature_path  accent_id
  transcript?``; a record may carry a literal 5th field ``pseudo``. Optional
  ``#``-prefixed header lines carry corpus metadata (feature_dim, accents,
  units). Feature paths are relative to the manifest's directory.
* Alignment sidecar (``<manifest>.align``): ``id<TAB>space-joined per-frame
  token ids``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .nn import module_rng

FEATURE_MAGIC = b"AIPF"


# --------------------------------------------------------------------------
# Types


@dataclass
class Utterance:
    """One corpus record; ``features`` is filled lazily by loaders."""

    utt_id: str
    feature_path: str
    accent_id: int
    transcript: str | None = None
    pseudo: bool = False
    features: np.ndarray | None = None

    @property
    def tokens(self) -> list[str]:
        return self.transcript.split() if self.transcript else []


@dataclass
class CorpusManifest:
    records: list[Utterance]
    accent_names: list[str]
    feature_dim: int
    units: list[str] | None = None
    root: Path | None = field(default=None, compare=False)

    @property
    def num_accents(self) -> int:
        return len(self.accent_names)

    def feature_array(self, rec: Utterance) -> np.ndarray:
        """Load (and cache) the (T, F) float32 features for one record."""
        if rec.features is None:
            if self.root is None:
                raise DataError("manifest has no root directory; save or load it first")
            rec.features = read_features(self.root / rec.feature_path)
        return rec.features

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"#\tfeature_dim\t{self.feature_dim}",
                 "#\taccents\t" + "\t".join(self.accent_names)]
        if self.units is not None:
            lines.append("#\tunits\t" + "\t".join(self.units))
        for rec in self.records:
            fields = [rec.utt_id, rec.feature_path, str(rec.accent_id)]
            if rec.transcript is not None:
                _check_field(rec.transcript, "transcript")
                fields.append(rec.transcript)
                if rec.pseudo:
                    fields.append("pseudo")
            elif rec.pseudo:
                raise ValidationError(f"record {rec.utt_id}: pseudo flag without transcript")
            lines.append("\t".join(fields))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.root = path.parent


def _check_field(value: str, what: str) -> None:
    if "\t" in value or "\n" in value:
        raise ValidationError(f"{what} may not contain tabs or newlines")
    if value == "":
        raise ValidationError(f"{what} may not be empty")


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse a manifest; every complaint names its 1-based line number."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    accent_names: list[str] | None = None
    feature_dim: int | None = None
    units: list[str] | None = None
    records: list[Utterance] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if fields[0] == "#":
            if len(fields) < 3:
                raise DataError(f"manifest line {lineno}: malformed header")
            key = fields[1]
            if key == "feature_dim":
                feature_dim = _parse_int(fields[2], lineno, "feature_dim")
            elif key == "accents":
                accent_names = fields[2:]
            elif key == "units":
                units = fields[2:]
            else:
                raise DataError(f"manifest line {lineno}: unknown header '{key}'")
            continue
        if len(fields) < 3 or len(fields) > 5:
            raise DataError(f"manifest line {lineno}: expected 3-5 tab-separated fields, "
                            f"got {len(fields)}")
        utt_id, feat_path = fields[0], fields[1]
        if not utt_id or not feat_path:
            raise DataError(f"manifest line {lineno}: empty id or feature path")
        if utt_id in seen:
            raise DataError(f"manifest line {lineno}: duplicate id '{utt_id}'")
        seen.add(utt_id)
        accent_id = _parse_int(fields[2], lineno, "accent id")
        if accent_id < 0:
            raise DataError(f"manifest line {lineno}: negative accent id")
        transcript = None
        pseudo = False
        if len(fields) >= 4:
            transcript = fields[3]
            if transcript == "":
                raise DataError(f"manifest line {lineno}: empty transcript field")
        if len(fields) == 5:
            if fields[4] != "pseudo":
                raise DataError(f"manifest line {lineno}: 5th field must be 'pseudo'")
            pseudo = True
        records.append(Utterance(utt_id, feat_path, accent_id, transcript, pseudo))
    if accent_names is None:
        highest = max((r.accent_id for r in records), default=-1)
        accent_names = [f"accent{i}" for i in range(highest + 1)]
    for rec in records:
        if rec.accent_id >= len(accent_names):
            raise DataError(f"manifest record '{rec.utt_id}': accent id {rec.accent_id} "
                            f"out of range for {len(accent_names)} accents")
    if feature_dim is None:
        if not records:
            raise DataError(f"manifest {path}: empty and no feature_dim header")
        feature_dim = read_features(path.parent / records[0].feature_path).shape[1]
    return CorpusManifest(records, accent_names, feature_dim, units, root=path.parent)


def _parse_int(text: str, lineno: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"manifest line {lineno}: bad {what} '{text}'") from None


# --------------------------------------------------------------------------
# Feature file I/O


def write_features(path: str | Path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype=np.float32)
    if feats.ndim != 2:
        raise ValidationError(f"features must be 2-D (frames x dims), got shape {feats.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_rows, n_cols = feats.shape
    header = FEATURE_MAGIC + np.array([n_rows, n_cols], dtype="<u4").tobytes()
    path.write_bytes(header + feats.astype("<f4").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {FEATURE_MAGIC!r}")
    if len(blob) < 12:
        raise DataError(f"{path}: truncated header")
    n_rows, n_cols = np.frombuffer(blob[4:12], dtype="<u4")
    expected = 12 + 4 * int(n_rows) * int(n_cols)
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {n_rows}x{n_cols}, "
                        f"got {len(blob)}")
    data = np.frombuffer(blob[12:], dtype="<f4").reshape(int(n_rows), int(n_cols))
    return data.copy()


# --------------------------------------------------------------------------
# Synthetic generation


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic accented corpus.

    ``transform_strength`` scales both the per-accent affine perturbation and
    the constant bias; ``noise`` is the per-dimension additive noise sigma.
    Non-reference accents can additionally merge part of the vocabulary:
    ``merger_fraction`` of the tokens drift ``merger_depth`` of the way
    toward another token's prototype (a partial phonemic merger, like
    caught/cot), so those tokens cannot be read frame-locally without first
    inferring the accent. The merger is folded into the accent's affine
    transform by least squares, which spreads a small residual over the
    remaining tokens. Prototypes and accent transforms are fixed by ``seed``
    alone, so two corpora generated from the same spec (e.g. train and test)
    share accents.
    """

    num_accents: int = 3
    vocab_size: int = 20
    feature_dim: int = 16
    tokens_per_utt: tuple[int, int] = (3, 8)
    frames_per_token: tuple[int, int] = (2, 5)
    transform_strength: float = 1.0
    merger_fraction: float = 0.0
    merger_depth: float = 0.0
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_accents < 1:
            raise ValidationError("num_accents must be >= 1")
        if self.vocab_size < 1:
            raise ValidationError("vocab_size must be >= 1")
        if self.feature_dim < 1:
            raise ValidationError("feature_dim must be >= 1")
        for name in ("tokens_per_utt", "frames_per_token"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValidationError(f"{name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if self.transform_strength < 0:
            raise ValidationError("transform_strength must be >= 0")
        if not 0.0 <= self.merger_fraction < 1.0:
            raise ValidationError("merger_fraction must be in [0, 1)")
        if not 0.0 <= self.merger_depth <= 1.0:
            raise ValidationError("merger_depth must be in [0, 1]")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")

    @property
    def unit_names(self) -> list[str]:
        width = max(2, len(str(self.vocab_size - 1)))
        return [f"u{i:0{width}d}" for i in range(self.vocab_size)]

    def accent_fixtures(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(prototypes (V,F), transforms (C,F,F), biases (C,F)), seed-fixed."""
        rng = module_rng(self.seed, "synthetic.fixtures")
        v, f, c = self.vocab_size, self.feature_dim, self.num_accents
        prototypes = rng.standard_normal((v, f))
        transforms = np.tile(np.eye(f), (c, 1, 1))
        biases = np.zeros((c, f))
        s = self.transform_strength
        n_merged = int(round(self.merger_fraction * v))
        for accent in range(1, c):
            transforms[accent] += 0.35 * s * rng.standard_normal((f, f)) / np.sqrt(f)
            biases[accent] = s * rng.standard_normal(f)
            if n_merged > 0 and self.merger_depth > 0:
                # per-accent merger: fit an affine map sending the merged
                # tokens' prototypes part-way toward their partner's while
                # roughly holding the rest in place, then ride it on the
                # perturbation. V > F+1 makes the fit a compromise, so the
                # merged rows get extra weight and the rest absorb the
                # residual as generic accent drift.
                order = rng.permutation(v)
                merged, rest = order[:n_merged], order[n_merged:]
                partners = rng.choice(rest, size=n_merged, replace=True)
                goal = prototypes.copy()
                goal[merged] = ((1.0 - self.merger_depth) * prototypes[merged]
                                + self.merger_depth * prototypes[partners])
                weight = np.ones((v, 1))
                weight[merged] = 4.0
                design = np.concatenate([prototypes, np.ones((v, 1))], axis=1)
                fit, *_ = np.linalg.lstsq(design * weight, goal * weight, rcond=None)
                transforms[accent] = fit[:f].T + (transforms[accent] - np.eye(f))
                biases[accent] += fit[f]
        return prototypes, transforms, biases


def generate_synthetic_corpus(spec: SyntheticSpec, n_utts: int,
                              manifest_path: str | Path,
                              seed: int | None = None) -> CorpusManifest:
    """Write ``n_utts`` utterances, their manifest, and the alignment sidecar.

    ``seed`` drives utterance sampling only (defaults to ``spec.seed``);
    prototypes and accent transforms always come from ``spec.seed`` so
    differently seeded corpora from one spec are accent-compatible.
    """
    if n_utts < 1:
        raise ValidationError("n_utts must be >= 1")
    manifest_path = Path(manifest_path)
    feat_dir_name = manifest_path.name.split(".")[0] + "_feats"
    feat_dir = manifest_path.parent / feat_dir_name
    prototypes, transforms, biases = spec.accent_fixtures()
    rng = module_rng(spec.seed if seed is None else seed, "synthetic.utterances")
    units = spec.unit_names
    records: list[Utterance] = []
    align_lines: list[str] = []
    width = max(5, len(str(n_utts - 1)))
    for i in range(n_utts):
        accent = i % spec.num_accents
        n_tokens = int(rng.integers(spec.tokens_per_utt[0], spec.tokens_per_utt[1] + 1))
        token_ids = rng.integers(0, spec.vocab_size, n_tokens)
        durations = rng.integers(spec.frames_per_token[0], spec.frames_per_token[1] + 1,
                                 n_tokens)
        frame_tokens = np.repeat(token_ids, durations)
        clean = prototypes[frame_tokens]
        feats = clean @ transforms[accent].T + biases[accent]
        if spec.noise > 0:
            feats = feats + spec.noise * rng.standard_normal(feats.shape)
        utt_id = f"utt{i:0{width}d}"
        rel_path = f"{feat_dir_name}/{utt_id}.aipf"
        write_features(manifest_path.parent / rel_path, feats)
        transcript = " ".join(units[t] for t in token_ids)
        records.append(Utterance(utt_id, rel_path, accent, transcript))
        align_lines.append(utt_id + "\t" + " ".join(str(t) for t in frame_tokens))
    accent_names = [f"accent{c}" for c in range(spec.num_accents)]
    manifest = CorpusManifest(records, accent_names, spec.feature_dim, units)
    manifest.save(manifest_path)
    align_path = manifest_path.with_name(manifest_path.name + ".align")
    align_path.write_text("\n".join(align_lines) + "\n", encoding="utf-8")
    return manifest


def load_alignments(manifest_path: str | Path) -> dict[str, np.ndarray]:
    """Read the sidecar written by the generator: id -> per-frame token ids."""
    path = Path(str(manifest_path) + ".align")
    if not path.is_file():
        raise DataError(f"alignment sidecar not found: {path}")
    out: dict[str, np.ndarray] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 2:
            raise DataError(f"alignment line {lineno}: expected 2 fields")
        out[fields[0]] = np.array([int(t) for t in fields[1].split()], dtype=np.int64)
    return out


# --------------------------------------------------------------------------
# Manifest surgery


def split_corpus(manifest: CorpusManifest, valid_fraction: float,
                 seed: int) -> tuple[CorpusManifest, CorpusManifest]:
    """Accent-stratified split; the valid side gets >= 1 utterance per accent
    whenever that accent has >= 2, and both sides must end up non-empty."""
    if not 0.0 < valid_fraction < 1.0:
        raise ValidationError(f"valid_fraction must be in (0, 1), got {valid_fraction}")
    rng = module_rng(seed, "corpus.split")
    by_accent: dict[int, list[Utterance]] = {}
    for rec in sorted(manifest.records, key=lambda r: r.utt_id):
        by_accent.setdefault(rec.accent_id, []).append(rec)
    valid_ids: set[str] = set()
    for accent in sorted(by_accent):
        recs = by_accent[accent]
        if len(recs) < 2:
            continue
        k = int(round(valid_fraction * len(recs)))
        k = min(max(k, 1), len(recs) - 1)
        order = rng.permutation(len(recs))
        valid_ids.update(recs[i].utt_id for i in order[:k])
    train = [r for r in manifest.records if r.utt_id not in valid_ids]
    valid = [r for r in manifest.records if r.utt_id in valid_ids]
    if not train or not valid:
        raise ValidationError(f"valid_fraction {valid_fraction} yields an empty split "
                              f"({len(train)} train / {len(valid)} valid)")
    make = lambda recs: CorpusManifest([replace(r, features=None) for r in recs],
                                       list(manifest.accent_names), manifest.feature_dim,
                                       list(manifest.units) if manifest.units else None,
                                       root=manifest.root)
    return make(train), make(valid)


def restrict_transcripts(manifest: CorpusManifest,
                         keep_accents: set[int]) -> CorpusManifest:
    """Drop transcripts for accents outside ``keep_accents`` (the
    semi-supervised 'only the reference accent is labeled' setup)."""
    for accent in keep_accents:
        if not 0 <= accent < manifest.num_accents:
            raise ValidationError(f"keep accent {accent} out of range")
    records = []
    for rec in manifest.records:
        if rec.accent_id in keep_accents:
            records.append(replace(rec, features=None))
        else:
            records.append(replace(rec, transcript=None, pseudo=False, features=None))
    return CorpusManifest(records, list(manifest.accent_names), manifest.feature_dim,
                          list(manifest.units) if manifest.units else None,
                          root=manifest.root)


def relativize(path: str | Path, base: str | Path) -> str:
    """Relative path string with forward slashes (manifests are portable)."""
    rel = os.path.relpath(Path(path), Path(base))
    return rel.replace(os.sep, "/")
