"""Training loops: adversarial pre-training, the two fine-tuning modes, the
four baselines, pseudo-labeling, and Adam with resumable state.

Modes
-----

* ``pretrain``: alternates a discriminator step (the invariant-branch
  discriminator learns to classify accents from frozen invariant embeddings)
  with a generator step (both encoders, the specific-branch discriminator and
  the reconstructor minimize the composite generator objective against the
  frozen invariant discriminator). Transcripts are not needed.
* ``f1``: supervised fine-tuning of the invariant encoder plus the recognizer
  by recognition CE; everything else frozen.
* ``f2``: the pretraining alternation with the weighted recognition CE added
  to the generator step (recognizer parameters join that step's update).
* ``b1``: plain pooled recognizer (invariant encoder + recognizer, CE only).
* ``b2``: b1 with the inventory extended by per-accent tokens; each target
  sequence carries its accent token before <eos>.
* ``b3``: b1 with a broadcast accent embedding concatenated to every
  recognizer encoder input frame.
* ``b4``: single-phase b1 plus accent CE through a gradient-reversal wrapper
  (the discriminator learns accents; the encoder is pushed the other way,
  scaled by ``reversal_scale``).

Each optimizer step updates exactly its mode's parameter scope, so freeze
contracts hold bitwise. Batches pack length-sorted utterances under a padded
frame budget; batch composition is fixed, batch order is reshuffled every
epoch from the run's data stream. One JSON line per optimizer step goes to
``train.log.jsonl`` (no timestamps anywhere, so reruns reproduce artifacts
byte for byte). ``last.ckpt`` (parameters + Adam + RNG streams) rolls per
epoch and resumes exactly; ``final.ckpt`` is the model-only result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses, tape
from .corpus import CorpusManifest, Utterance, relativize
from .decode import beam_search
from .errors import ConfigError, DataError, TrainingAbort, ValidationError
from .evaluate import discriminator_accuracy, validation_accuracy
from .features import stack_frames
from .losses import LossReport, LossWeights
from .model import (Architecture, ModelBundle, TokenInventory, build_targets,
                    read_checkpoint, save_checkpoint)
from .nn import module_rng
from .tape import Tensor

MODES = ("pretrain", "f1", "f2", "b1", "b2", "b3", "b4")

# Parameter scopes: what each optimizer step is allowed to touch.
_GENERATOR_SCOPE = ("invariant_encoder", "specific_encoder",
                    "specific_discriminator", "reconstructor")
_RECOGNIZER_SCOPE = ("invariant_encoder", "recognizer_encoder", "recognizer_decoder")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on besides the corpus itself."""

    mode: str = "pretrain"
    seed: int = 0
    lr_pretrain: float = 5e-4
    lr_finetune: float = 2.5e-4
    epochs_pretrain: int = 15
    epochs_finetune: int = 20
    batch_frames: int = 512
    d_steps: int = 1
    g_steps: int = 1
    reversal_scale: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode '{self.mode}'; expected one of {MODES}")
        if self.lr_pretrain < 0 or self.lr_finetune < 0:
            raise ValidationError("learning rates must be >= 0")
        if self.epochs_pretrain < 0 or self.epochs_finetune < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_frames < 1:
            raise ValidationError("batch_frames must be >= 1")
        if self.d_steps < 1 or self.g_steps < 1:
            raise ValidationError("d_steps and g_steps must be >= 1")
        if self.reversal_scale < 0:
            raise ValidationError("reversal_scale must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValidationError("adam betas must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ValidationError("adam_eps must be > 0")

    @property
    def is_finetune(self) -> bool:
        return self.mode in ("f1", "f2")

    @property
    def lr(self) -> float:
        return self.lr_finetune if self.is_finetune else self.lr_pretrain

    @property
    def epochs(self) -> int:
        return self.epochs_finetune if self.is_finetune else self.epochs_pretrain


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter first/second moments and step counts. Counts are per
    parameter because alternating schemes update disjoint scopes at
    different cadences; bias correction must follow each parameter's own
    update count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam over ``params`` using their ``.grad``
    fields (a missing grad counts as zero). Aborts on non-finite gradients."""
    for name in sorted(params):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingAbort(f"non-finite gradient in parameter '{name}'")
        t = state.t.get(name, 0) + 1
        state.t[name] = t
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


# --------------------------------------------------------------------------
# Batching


@dataclass
class Batch:
    utt_ids: list[str]
    features: np.ndarray          # (B, T, D) float64, zero-padded
    frame_mask: np.ndarray        # (B, T) 1.0 on real frames
    accents: np.ndarray           # (B,) int64
    targets: np.ndarray | None = None    # (B, J) int64, <eos>-padded
    step_mask: np.ndarray | None = None  # (B, J-1) 1.0 on real steps


def _build_batch(records: list[Utterance], manifest: CorpusManifest,
                 inventory: TokenInventory, frame_stack: int,
                 with_targets: bool) -> Batch:
    feats = [stack_frames(manifest.feature_array(r), frame_stack) for r in records]
    b = len(records)
    t_max = max(f.shape[0] for f in feats)
    features = np.zeros((b, t_max, feats[0].shape[1]))
    frame_mask = np.zeros((b, t_max))
    for i, f in enumerate(feats):
        features[i, :f.shape[0]] = f
        frame_mask[i, :f.shape[0]] = 1.0
    accents = np.array([r.accent_id for r in records], dtype=np.int64)
    targets = step_mask = None
    if with_targets:
        ids = [build_targets(inventory, r.transcript, r.accent_id) for r in records]
        j_max = max(len(seq) for seq in ids)
        targets = np.full((b, j_max), inventory.eos_id, dtype=np.int64)
        step_mask = np.zeros((b, j_max - 1))
        for i, seq in enumerate(ids):
            targets[i, :len(seq)] = seq
            step_mask[i, :len(seq) - 1] = 1.0
    return Batch([r.utt_id for r in records], features, frame_mask, accents,
                 targets, step_mask)


def make_batches(records: list[Utterance], manifest: CorpusManifest,
                 inventory: TokenInventory, batch_frames: int, frame_stack: int,
                 with_targets: bool) -> list[Batch]:
    """Length-sorted greedy packing under a padded-frame budget.

    Records are sorted by (frame count, id) so padding stays small and the
    packing is independent of input order; a batch closes when adding one
    more record would push (batch size) x (longest length) past
    ``batch_frames``. Over-budget single utterances get their own batch.
    """
    def length(r: Utterance) -> int:
        return stack_frames(manifest.feature_array(r), frame_stack).shape[0]

    ordered = sorted(records, key=lambda r: (length(r), r.utt_id))
    groups: list[list[Utterance]] = []
    current: list[Utterance] = []
    for rec in ordered:
        if current and (len(current) + 1) * length(rec) > batch_frames:
            groups.append(current)
            current = []
        current.append(rec)
    if current:
        groups.append(current)
    return [_build_batch(g, manifest, inventory, frame_stack, with_targets)
            for g in groups]


# --------------------------------------------------------------------------
# Loss graphs (one forward pass each; callers pick the update scope)


def discriminator_losses(bundle: ModelBundle, batch: Batch,
                         training: bool = True) -> tuple[Tensor, LossReport]:
    """Invariant-branch discriminator CE on detached generator output."""
    with tape.no_grad():
        h_inv = bundle.encode_invariant(Tensor(batch.features), training=training)
    probs = bundle.invariant_discriminator(Tensor(h_inv.data), training=training)
    term = losses.ce_accent(probs, batch.accents, batch.frame_mask)
    total = losses.compose_discriminator_objective({"ce_invariant": term})
    report = LossReport(total=total.item(), ce_invariant=term.item(),
                        frames=term.count, floored=term.floored)
    return total, report


def generator_losses(bundle: ModelBundle, batch: Batch, weights: LossWeights,
                     include_asr: bool, training: bool = True
                     ) -> tuple[Tensor, LossReport]:
    """The generator-step objective; with ``include_asr`` the weighted
    recognition CE joins in (the joint fine-tuning step)."""
    feats = Tensor(batch.features)
    h_inv, h_spec = bundle.forward_generators(feats, training=training)
    ce_inv = losses.ce_accent(bundle.invariant_discriminator(h_inv, training=training),
                              batch.accents, batch.frame_mask)
    ce_spec = losses.ce_accent(bundle.specific_discriminator(h_spec, training=training),
                               batch.accents, batch.frame_mask)
    recon = losses.reconstruction_loss(feats, bundle.reconstruct(h_inv, h_spec,
                                                                 training=training),
                                       batch.frame_mask)
    consistency = losses.consistency_loss(h_spec, batch.frame_mask)
    parts = {"ce_invariant": ce_inv, "ce_specific": ce_spec,
             "reconstruction": recon, "consistency": consistency}
    report = LossReport(total=0.0, ce_invariant=ce_inv.item(),
                        neg_ce_invariant=-ce_inv.item(), ce_specific=ce_spec.item(),
                        reconstruction=recon.item(), consistency=consistency.item(),
                        frames=ce_inv.count, pairs=consistency.count,
                        floored=ce_inv.floored + ce_spec.floored)
    if include_asr:
        enc = bundle.recognizer_encode(h_inv, training=training)
        posts, _ = bundle.recognize_teacher_forced(enc, batch.frame_mask,
                                                   batch.targets, training=training)
        asr = losses.asr_loss(posts, batch.targets[:, 1:], batch.step_mask)
        parts["asr"] = asr
        report.asr, report.steps = asr.item(), asr.count
        report.floored += asr.floored
        total = losses.compose_recognizer_objective(parts, weights)
    else:
        total = losses.compose_generator_objective(parts, weights)
    report.total = total.item()
    return total, report


def recognizer_losses(bundle: ModelBundle, batch: Batch, mode: str,
                      reversal_scale: float = 1.0, training: bool = True
                      ) -> tuple[Tensor, LossReport]:
    """Recognition CE for the plain recognizer modes; the reversal baseline
    adds accent CE whose gradient reaches the encoder negated and scaled."""
    h_inv = bundle.encode_invariant(Tensor(batch.features), training=training)
    accents = batch.accents if bundle.arch.accent_conditioned_encoder else None
    enc = bundle.recognizer_encode(h_inv, accents=accents, training=training)
    posts, _ = bundle.recognize_teacher_forced(enc, batch.frame_mask, batch.targets,
                                               training=training)
    asr = losses.asr_loss(posts, batch.targets[:, 1:], batch.step_mask)
    total = asr.value
    report = LossReport(total=asr.item(), asr=asr.item(), steps=asr.count,
                        floored=asr.floored)
    if mode == "b4":
        reversed_h = tape.reverse_gradient(h_inv, reversal_scale)
        ce = losses.ce_accent(bundle.invariant_discriminator(reversed_h,
                                                             training=training),
                              batch.accents, batch.frame_mask)
        total = total + ce.value
        report.ce_invariant, report.frames = ce.item(), ce.count
        report.floored += ce.floored
        report.total = total.item()
    return total, report


# --------------------------------------------------------------------------
# Train state


@dataclass
class TrainState:
    """A training run's complete resumable state."""

    bundle: ModelBundle
    optimizer: AdamState
    data_rng: np.random.Generator
    mode: str
    step: int = 0
    epoch: int = 0
    skipped: int = 0

    def save(self, path: str | Path) -> None:
        arrays = {n: p.data for n, p in self.bundle.parameters().items()}
        for name, m in self.optimizer.m.items():
            arrays[f"optimizer.m.{name}"] = m
            arrays[f"optimizer.v.{name}"] = self.optimizer.v[name]
        meta = {"train_state": {
            "mode": self.mode, "step": self.step, "epoch": self.epoch,
            "skipped": self.skipped, "adam_t": self.optimizer.t,
            "data_rng": self.data_rng.bit_generator.state,
            "module_rngs": self.bundle.rng_states(),
        }}
        save_checkpoint(path, self.bundle.arch, self.bundle.inventory,
                        self.bundle.seed, arrays, meta)

    @classmethod
    def load(cls, path: str | Path, expect_arch: Architecture | None = None,
             expect_mode: str | None = None) -> "TrainState":
        header, arrays = read_checkpoint(path)
        ts = header.get("meta", {}).get("train_state")
        if ts is None:
            raise DataError(f"{path}: no training state (model-only checkpoint?)")
        arch = Architecture.from_dict(header["arch"])
        if expect_arch is not None and arch != expect_arch:
            diff = [k for k, v in arch.to_dict().items()
                    if v != expect_arch.to_dict()[k]]
            raise ConfigError(f"resume architecture mismatch on fields: {diff}")
        if expect_mode is not None and ts["mode"] != expect_mode:
            raise ConfigError(f"resume mode '{ts['mode']}' != requested '{expect_mode}'")
        inventory = TokenInventory.from_dict(header["inventory"])
        bundle = ModelBundle(arch, inventory, int(header["seed"]))
        params = bundle.parameters()
        model_arrays = {n: a for n, a in arrays.items() if not n.startswith("optimizer.")}
        if set(params) != set(model_arrays):
            raise DataError(f"{path}: parameter names mismatch")
        for name, tensor in params.items():
            if tensor.data.shape != model_arrays[name].shape:
                raise DataError(f"{path}: tensor {name}: shape "
                                f"{model_arrays[name].shape} != {tensor.data.shape}")
            tensor.data = model_arrays[name]
        optimizer = AdamState(t={k: int(v) for k, v in ts["adam_t"].items()})
        for name, a in arrays.items():
            if name.startswith("optimizer.m."):
                optimizer.m[name[len("optimizer.m."):]] = a
            elif name.startswith("optimizer.v."):
                optimizer.v[name[len("optimizer.v."):]] = a
        bundle.set_rng_states(ts["module_rngs"])
        data_rng = np.random.default_rng()
        data_rng.bit_generator.state = ts["data_rng"]
        return cls(bundle, optimizer, data_rng, ts["mode"], int(ts["step"]),
                   int(ts["epoch"]), int(ts.get("skipped", 0)))


# --------------------------------------------------------------------------
# The training loop


def _mode_scopes(mode: str) -> tuple[tuple[str, ...] | None, tuple[str, ...]]:
    """(discriminator-step scope or None, main-step scope) per mode."""
    if mode == "pretrain":
        return ("invariant_discriminator",), _GENERATOR_SCOPE
    if mode == "f2":
        return (("invariant_discriminator",),
                _GENERATOR_SCOPE + ("recognizer_encoder", "recognizer_decoder"))
    if mode in ("f1", "b1", "b2"):
        return None, _RECOGNIZER_SCOPE
    if mode == "b3":
        return None, _RECOGNIZER_SCOPE + ("accent_embedding",)
    return None, _RECOGNIZER_SCOPE + ("invariant_discriminator",)  # b4


def _resolve_arch(cfg: TrainConfig, manifest: CorpusManifest) -> Architecture:
    return replace(cfg.arch, feature_dim=manifest.feature_dim,
                   num_accents=manifest.num_accents,
                   accent_conditioned_encoder=(cfg.mode == "b3"
                                               or cfg.arch.accent_conditioned_encoder))


def _resolve_inventory(mode: str, manifest: CorpusManifest) -> TokenInventory:
    inv = (TokenInventory.from_units(manifest.units) if manifest.units
           else TokenInventory.default())
    if mode == "b2":
        inv = inv.with_accent_tokens(manifest.accent_names)
    return inv


def _select_records(mode: str, manifest: CorpusManifest) -> tuple[list[Utterance], int]:
    if mode == "pretrain":
        return list(manifest.records), 0
    usable = [r for r in manifest.records if r.transcript]
    skipped = len(manifest.records) - len(usable)
    if not usable:
        raise DataError(f"mode '{mode}' needs transcripts and the corpus has none")
    return usable, skipped


def _zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def _apply(bundle: ModelBundle, total: Tensor, report: LossReport, scope,
           state: TrainState, cfg: TrainConfig) -> None:
    bad = report.non_finite_components()
    if bad:
        raise TrainingAbort(f"non-finite loss component(s) {bad} at step {state.step}")
    _zero_grads(bundle.parameters())
    total.backward()
    adam_step(bundle.parameters_of(scope), state.optimizer, cfg.lr,
              cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    state.step += 1


def train(cfg: TrainConfig, manifest: CorpusManifest, out_dir: str | Path,
          valid: CorpusManifest | None = None, init_path: str | Path | None = None,
          resume: bool = False) -> TrainState:
    """Run ``cfg.epochs`` of ``cfg.mode`` over the manifest.

    ``init_path`` starts from a model checkpoint's parameters (fresh optimizer
    and ``cfg.seed``-derived streams); ``resume`` continues ``last.ckpt`` in
    ``out_dir`` exactly where it stopped. Writes ``train.log.jsonl``,
    a rolling ``last.ckpt``, and the model-only ``final.ckpt``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arch = _resolve_arch(cfg, manifest)
    inventory = _resolve_inventory(cfg.mode, manifest)
    last_path = out_dir / "last.ckpt"

    if resume:
        if not last_path.is_file():
            raise ConfigError(f"resume requested but {last_path} does not exist")
        state = TrainState.load(last_path, expect_arch=arch, expect_mode=cfg.mode)
        if state.bundle.inventory != inventory:
            raise ConfigError("resume checkpoint inventory differs from the corpus")
    else:
        if init_path is not None:
            bundle, _ = ModelBundle.load(init_path, expect_arch=arch)
            if bundle.inventory != inventory:
                raise ConfigError("init checkpoint inventory differs from the corpus")
            # Fresh phase: streams re-derive from this run's seed.
            bundle.seed = cfg.seed
            for module in bundle.modules.values():
                for part in bundle._nn_parts(module):
                    part.rng = module_rng(cfg.seed, part.name)
        else:
            bundle = ModelBundle(arch, inventory, cfg.seed)
        state = TrainState(bundle, AdamState(), module_rng(cfg.seed, "training.data"),
                           cfg.mode)

    records, state.skipped = _select_records(cfg.mode, manifest)
    batches = make_batches(records, manifest, inventory, cfg.batch_frames,
                           arch.frame_stack, with_targets=(cfg.mode != "pretrain"))
    d_scope, main_scope = _mode_scopes(cfg.mode)

    log_path = out_dir / "train.log.jsonl"
    with open(log_path, "a" if resume else "w", encoding="utf-8") as log:
        def emit_line(line: str) -> None:
            log.write(line + "\n")
            log.flush()

        def emit(record: dict) -> None:
            emit_line(json.dumps(record, sort_keys=True))

        emit({"event": "start", "mode": cfg.mode, "seed": cfg.seed,
              "epochs": cfg.epochs, "from_epoch": state.epoch,
              "records": len(records), "skipped": state.skipped,
              "batches": len(batches), "lr": cfg.lr,
              "batch_frames": cfg.batch_frames,
              "params": state.bundle.param_count()})
        if state.epoch == 0:
            state.save(last_path)

        try:
            for epoch in range(state.epoch, cfg.epochs):
                for index in state.data_rng.permutation(len(batches)):
                    batch = batches[int(index)]
                    if d_scope is not None:
                        for _ in range(cfg.d_steps):
                            total, report = discriminator_losses(state.bundle, batch)
                            _apply(state.bundle, total, report, d_scope, state, cfg)
                            emit_line(report.json_line(step=state.step, epoch=epoch,
                                                       phase="d"))
                        for _ in range(cfg.g_steps):
                            total, report = generator_losses(
                                state.bundle, batch, cfg.weights,
                                include_asr=(cfg.mode == "f2"))
                            _apply(state.bundle, total, report, main_scope, state, cfg)
                            emit_line(report.json_line(step=state.step, epoch=epoch,
                                                       phase="g"))
                    else:
                        total, report = recognizer_losses(state.bundle, batch, cfg.mode,
                                                          cfg.reversal_scale)
                        _apply(state.bundle, total, report, main_scope, state, cfg)
                        emit_line(report.json_line(step=state.step, epoch=epoch,
                                                   phase="asr"))
                state.epoch = epoch + 1
                record = {"event": "epoch", "epoch": state.epoch, "step": state.step}
                if valid is not None:
                    if cfg.mode == "pretrain":
                        record["valid_disc_accuracy"] = discriminator_accuracy(
                            state.bundle, valid)
                    else:
                        record["validation_accuracy"] = validation_accuracy(state.bundle,
                                                                            valid)
                state.save(last_path)
                emit(record)
        except TrainingAbort as abort:
            emit({"event": "abort", "reason": str(abort)})
            raise

        emit({"event": "end", "epoch": state.epoch, "step": state.step})

    state.bundle.save_checkpoint(out_dir / "final.ckpt",
                                 meta={"mode": cfg.mode, "epoch": state.epoch,
                                       "step": state.step})
    return state


# --------------------------------------------------------------------------
# Pseudo-labeling


def pseudo_label(bundle: ModelBundle, manifest: CorpusManifest,
                 out_path: str | Path, beam_size: int = 20,
                 max_len: int | None = None) -> tuple[CorpusManifest, dict]:
    """Decode every untranscribed record and write a manifest where those
    records carry hypothesis transcripts flagged ``pseudo``.

    Transcribed records pass through untouched. Records whose best hypothesis
    is empty after stripping specials are excluded; their ids come back in
    the counts dict. Counts: labeled / pseudo / excluded / incomplete (kept,
    but decoding hit the length cap before <eos>).
    """
    out_path = Path(out_path)
    if manifest.root is None:
        raise DataError("manifest has no root directory; load it from disk first")
    accented = bundle.arch.accent_conditioned_encoder
    records: list[Utterance] = []
    counts = {"labeled": 0, "pseudo": 0, "excluded": 0, "incomplete": 0,
              "excluded_ids": []}
    for rec in manifest.records:
        if rec.transcript:
            counts["labeled"] += 1
            new = replace(rec, features=None)
        else:
            hyp = beam_search(bundle, manifest.feature_array(rec), beam_size=beam_size,
                              max_len=max_len,
                              accent_id=rec.accent_id if accented else None)[0]
            if not hyp.complete:
                counts["incomplete"] += 1
            text = bundle.inventory.decode(hyp.tokens)
            if not text:
                counts["excluded"] += 1
                counts["excluded_ids"].append(rec.utt_id)
                continue
            counts["pseudo"] += 1
            new = replace(rec, transcript=text, pseudo=True, features=None)
        new.feature_path = relativize(manifest.root / rec.feature_path, out_path.parent)
        records.append(new)
    out = CorpusManifest(records, list(manifest.accent_names), manifest.feature_dim,
                         list(manifest.units) if manifest.units else None)
    out.save(out_path)
    return out, counts
