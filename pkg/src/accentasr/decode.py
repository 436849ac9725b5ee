"""Beam-search decoding.

Hypotheses are scored by the sum of chosen per-step log posteriors (floored
at 1e-12). Candidate pruning and final ranking both order by
``(-score, token ids)`` so ties resolve to the lexicographically smallest
token sequence and decoding is fully deterministic. Hypotheses that emit
<eos> are set aside as complete; if none completes within the step budget the
best partials are returned with ``complete=False``.

The whole beam advances as one batched decoder step per output position, so
beam width costs almost nothing extra.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tape
from .corpus import CorpusManifest
from .errors import DataError, DecodeError, ValidationError
from .features import stack_frames
from .model import DecoderState, ModelBundle
from .tape import Tensor

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class Hypothesis:
    """One decoded sequence: emitted token ids (including the trailing <eos>
    when complete) and the accumulated log probability."""

    tokens: tuple[int, ...]
    score: float
    complete: bool
    attention: tuple[np.ndarray, ...] | None = None

    def rank_key(self, length_normalize: bool = False):
        score = self.score / max(len(self.tokens), 1) if length_normalize else self.score
        return (-score, self.tokens)


def beam_search(bundle: ModelBundle, features: np.ndarray, beam_size: int = 20,
                max_len: int | None = None, length_normalize: bool = False,
                accent_id: int | None = None,
                record_attention: bool = False) -> list[Hypothesis]:
    """Decode one utterance; returns hypotheses ranked best-first.

    ``features``: raw (T, F) frames; frame stacking follows the bundle's
    architecture. ``max_len`` defaults to encoder frames + 10. ``accent_id``
    is required by accent-conditioned encoders and ignored otherwise.
    """
    if beam_size < 1:
        raise ValidationError(f"beam_size must be >= 1, got {beam_size}")
    feats = stack_frames(features, bundle.arch.frame_stack)
    t_enc = feats.shape[0]
    if max_len is None:
        max_len = t_enc + 10
    if max_len < 1:
        raise ValidationError(f"max_len must be >= 1, got {max_len}")
    inv = bundle.inventory
    decoder = bundle.recognizer_decoder
    with tape.no_grad():
        h_inv = bundle.encode_invariant(Tensor(feats[None, :, :]))
        accents = None if accent_id is None else np.array([accent_id])
        enc1 = bundle.recognizer_encode(h_inv, accents=accents).data
        keys1 = decoder.keys(Tensor(enc1)).data

        # Rows of the batch are live hypotheses, reindexed after every prune.
        tokens: list[tuple[int, ...]] = [()]
        scores = [0.0]
        attn: list[list[np.ndarray]] = [[]]
        state = decoder.initial_state(1)
        done: list[Hypothesis] = []
        for _ in range(max_len):
            n = len(tokens)
            last = np.array([seq[-1] if seq else inv.sos_id for seq in tokens])
            enc = Tensor(np.repeat(enc1, n, axis=0))
            keys = Tensor(np.repeat(keys1, n, axis=0))
            mask = np.ones((n, t_enc))
            posterior, attention, state = decoder.step(last, state, enc, keys, mask)
            logp = np.log(np.maximum(posterior.data, LOG_FLOOR))
            candidates = sorted(
                ((scores[i] + logp[i, v], tokens[i] + (v,), i)
                 for i in range(n) for v in range(inv.size)),
                key=lambda c: (-c[0], c[1]))[:beam_size]
            keep_rows, new_tokens, new_scores, new_attn = [], [], [], []
            for score, seq, row in candidates:
                rec = attn[row] + [attention.data[row].copy()] if record_attention else None
                if seq[-1] == inv.eos_id:
                    done.append(Hypothesis(seq, score, True,
                                           tuple(rec) if rec else None))
                else:
                    keep_rows.append(row)
                    new_tokens.append(seq)
                    new_scores.append(score)
                    new_attn.append(rec if rec is not None else [])
            if not keep_rows:
                tokens, scores, attn = [], [], []
                break
            rows = np.array(keep_rows)
            state = DecoderState(
                [(Tensor(h.data[rows]), Tensor(c.data[rows])) for h, c in state.lstm],
                Tensor(state.context.data[rows]))
            tokens, scores, attn = new_tokens, new_scores, new_attn

    if done:
        ranked = sorted(done, key=lambda h: h.rank_key(length_normalize))
        return ranked[:beam_size]
    if not tokens:
        raise DecodeError("beam search emptied without any hypothesis")
    partials = [Hypothesis(seq, score, False,
                           tuple(attn[i]) if record_attention else None)
                for i, (seq, score) in enumerate(zip(tokens, scores))]
    return sorted(partials, key=lambda h: h.rank_key(length_normalize))[:beam_size]


def decode_corpus(bundle: ModelBundle, manifest: CorpusManifest, beam_size: int = 20,
                  max_len: int | None = None,
                  length_normalize: bool = False) -> dict[str, Hypothesis]:
    """Best hypothesis per manifest record, keyed by utterance id. Accent ids
    are forwarded to accent-conditioned encoders."""
    accented = bundle.arch.accent_conditioned_encoder
    out: dict[str, Hypothesis] = {}
    for rec in manifest.records:
        feats = manifest.feature_array(rec)
        hyps = beam_search(bundle, feats, beam_size=beam_size, max_len=max_len,
                           length_normalize=length_normalize,
                           accent_id=rec.accent_id if accented else None)
        out[rec.utt_id] = hyps[0]
    return out


def write_hypotheses(hyps: dict[str, str], path: str | Path) -> None:
    """``id<TAB>text`` lines sorted by id, so re-decoding reproduces the file
    byte for byte. Empty hypotheses keep their line (text column empty)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{utt_id}\t{hyps[utt_id]}" for utt_id in sorted(hyps)]
    path.write_text("\n".join(lines) + "\n" if lines else "", encoding="utf-8")


def read_hypotheses(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"hypothesis file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) == 1:
            fields = [fields[0], ""]
        if len(fields) != 2 or not fields[0]:
            raise DataError(f"hypothesis line {lineno}: expected 'id<TAB>text'")
        if fields[0] in out:
            raise DataError(f"hypothesis line {lineno}: duplicate id '{fields[0]}'")
        out[fields[0]] = fields[1]
    return out
