"""Training objectives for disentanglement pre-training and recognition.

All losses are means over real (unmasked) frames / steps / frame-pairs rather
than raw sums, so magnitudes are comparable across utterance lengths and
architecture sizes; the normalizing counts travel in :class:`LossReport`.
Log probabilities are floored at 1e-12 with zero slope below the floor, and
the number of floored positions is reported.

Objectives:

* discriminator step: ``ce_invariant`` alone (trains the invariant-branch
  discriminator to classify accents).
* generator step: ``-ce_invariant + w1*ce_specific + w2*reconstruction +
  w3*consistency`` (fools the frozen invariant discriminator while the
  accent-specific branch stays cooperatively accent-predictive, frames
  reconstruct, and the specific branch stays smooth in time).
* joint step: generator objective ``+ w4*asr``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ValidationError
from .tape import Tensor

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite objectives (the four tunable multipliers)."""

    accent_specific: float = 1.0
    reconstruction: float = 10.0
    consistency: float = 10.0
    asr: float = 10.0


@dataclass
class LossTerm:
    """One loss component: its scalar tensor, the count it was normalized
    over, and how many positions hit the log floor."""

    value: Tensor
    count: int
    floored: int = 0

    def item(self) -> float:
        return self.value.item()


def _as_batched(x, ndim_unbatched: int):
    t = tape.as_tensor(x)
    if t.ndim == ndim_unbatched:
        return tape.reshape(t, (1,) + t.shape), True
    if t.ndim == ndim_unbatched + 1:
        return t, False
    raise ValidationError(f"expected {ndim_unbatched}-D or {ndim_unbatched + 1}-D input, "
                          f"got shape {t.shape}")


def _full_mask(shape: tuple[int, int], mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != shape:
        raise ValidationError(f"mask shape {mask.shape} != expected {shape}")
    return mask


def _masked_mean(per_pos: Tensor, mask: np.ndarray) -> tuple[Tensor, int]:
    count = int(round(mask.sum()))
    if count == 0:
        return Tensor(0.0), 0
    total = tape.reduce_sum(tape.mul(per_pos, mask))
    return tape.mul(total, 1.0 / count), count


def ce_accent(probs, accent, mask: np.ndarray | None = None) -> LossTerm:
    """Mean over frames of -log P(accent | frame).

    ``probs``: (T, C) rows or a (B, T, C) batch; ``accent``: an int (broadcast
    to every frame, accents are utterance-level) or a (B,) array.
    """
    p, _ = _as_batched(probs, 2)
    b, t, c = p.shape
    accents = np.atleast_1d(np.asarray(accent, dtype=np.int64))
    if accents.shape != (b,):
        raise ValidationError(f"accent shape {accents.shape} incompatible with batch {b}")
    if (accents < 0).any() or (accents >= c).any():
        raise ValidationError(f"accent id out of range for {c} classes")
    onehot = np.zeros((b, 1, c))
    onehot[np.arange(b), 0, accents] = 1.0
    target_p = tape.reduce_sum(tape.mul(p, onehot), axis=-1)  # (B, T)
    mask_arr = _full_mask((b, t), mask)
    floored = int(((target_p.data <= LOG_FLOOR) * (mask_arr > 0)).sum())
    neg_log = tape.mul(tape.log(target_p, floor=LOG_FLOOR), -1.0)
    value, count = _masked_mean(neg_log, mask_arr)
    return LossTerm(value, count, floored)


def neg_ce_accent(probs, accent, mask: np.ndarray | None = None) -> LossTerm:
    """Negated accent CE: what the invariant generator minimizes."""
    term = ce_accent(probs, accent, mask)
    return LossTerm(tape.mul(term.value, -1.0), term.count, term.floored)


def reconstruction_loss(original, reconstructed, mask: np.ndarray | None = None) -> LossTerm:
    """Mean over frames of the squared L2 distance between frame vectors."""
    x, _ = _as_batched(original, 2)
    y, _ = _as_batched(reconstructed, 2)
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {y.shape}")
    diff = x - y
    per_frame = tape.reduce_sum(tape.mul(diff, diff), axis=-1)  # (B, T)
    mask_arr = _full_mask(per_frame.shape, mask)
    value, count = _masked_mean(per_frame, mask_arr)
    return LossTerm(value, count)


def consistency_loss(embeddings, mask: np.ndarray | None = None) -> LossTerm:
    """Mean over consecutive frame pairs of the squared L2 step; one-frame
    utterances contribute no pairs (loss 0)."""
    h, _ = _as_batched(embeddings, 2)
    b, t, _ = h.shape
    mask_arr = _full_mask((b, t), mask)
    if t < 2:
        return LossTerm(Tensor(0.0), 0)
    diff = h[:, 1:, :] - h[:, :-1, :]
    per_pair = tape.reduce_sum(tape.mul(diff, diff), axis=-1)  # (B, T-1)
    pair_mask = mask_arr[:, 1:] * mask_arr[:, :-1]
    value, count = _masked_mean(per_pair, pair_mask)
    return LossTerm(value, count)


def asr_loss(posteriors, targets, mask: np.ndarray | None = None) -> LossTerm:
    """Mean over output steps of -log P(target token | step posterior)."""
    p, _ = _as_batched(posteriors, 2)
    b, j, v = p.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[None, :]
    if idx.shape != (b, j):
        raise ValidationError(f"targets shape {idx.shape} != posterior steps ({b}, {j})")
    if (idx < 0).any() or (idx >= v).any():
        raise ValidationError(f"target token id out of range for {v} outputs")
    onehot = np.zeros((b, j, v))
    onehot[np.arange(b)[:, None], np.arange(j)[None, :], idx] = 1.0
    target_p = tape.reduce_sum(tape.mul(p, onehot), axis=-1)  # (B, J)
    mask_arr = _full_mask((b, j), mask)
    floored = int(((target_p.data <= LOG_FLOOR) * (mask_arr > 0)).sum())
    neg_log = tape.mul(tape.log(target_p, floor=LOG_FLOOR), -1.0)
    value, count = _masked_mean(neg_log, mask_arr)
    return LossTerm(value, count, floored)


# --------------------------------------------------------------------------
# Composition


def _part(parts: dict, name: str) -> Tensor:
    if name not in parts:
        raise ValidationError(f"missing loss part '{name}'")
    value = parts[name]
    return value.value if isinstance(value, LossTerm) else tape.as_tensor(value)


def compose_discriminator_objective(parts: dict) -> Tensor:
    """Objective of the discriminator step: the invariant-branch accent CE."""
    return _part(parts, "ce_invariant")


def compose_generator_objective(parts: dict, weights: LossWeights) -> Tensor:
    """Objective of the generator step (invariant discriminator frozen)."""
    return (tape.mul(_part(parts, "ce_invariant"), -1.0)
            + tape.mul(_part(parts, "ce_specific"), weights.accent_specific)
            + tape.mul(_part(parts, "reconstruction"), weights.reconstruction)
            + tape.mul(_part(parts, "consistency"), weights.consistency))


def compose_recognizer_objective(parts: dict, weights: LossWeights) -> Tensor:
    """Generator objective plus the weighted recognition CE (joint phase)."""
    return compose_generator_objective(parts, weights) + tape.mul(_part(parts, "asr"),
                                                                  weights.asr)


# --------------------------------------------------------------------------
# Reporting


@dataclass
class LossReport:
    """Per-step loss record; unused components stay None. Serialized as one
    JSON line per optimizer step in the training log."""

    total: float
    ce_specific: float | None = None
    ce_invariant: float | None = None
    neg_ce_invariant: float | None = None
    reconstruction: float | None = None
    consistency: float | None = None
    asr: float | None = None
    frames: int = 0
    pairs: int = 0
    steps: int = 0
    floored: int = 0

    def components(self) -> dict[str, float]:
        keys = ("ce_specific", "ce_invariant", "neg_ce_invariant", "reconstruction",
                "consistency", "asr")
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}

    def non_finite_components(self) -> list[str]:
        bad = [k for k, v in self.components().items() if not np.isfinite(v)]
        if not np.isfinite(self.total):
            bad.append("total")
        return bad

    def json_line(self, **context) -> str:
        record = dict(context)
        record.update({k: v for k, v in self.__dict__.items() if v is not None})
        return json.dumps(record, sort_keys=True)
