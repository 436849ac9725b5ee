"""The model bundle: disentangling encoders, per-frame accent discriminators,
a frame reconstructor, and an attention-based seq2seq recognizer.

Wiring:

* ``invariant_encoder`` and ``specific_encoder`` both read feature frames;
  the first should end up carrying only content, the second only accent.
* Each branch has a per-frame discriminator (1 LSTM layer + linear +
  softmax) that predicts the utterance's accent at every frame.
* ``reconstructor`` rebuilds the input frame from the concatenation of both
  branch embeddings.
* The recognizer runs its encoder LSTM stack on top of the invariant
  embeddings (optionally concatenated with a broadcast accent embedding) and
  decodes with a dot-product-attention LSTM decoder over the full token
  inventory.

Every submodule draws init and dropout from its own (seed, name) RNG stream;
see nn.module_rng for why.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tape
from .errors import ConfigError, DataError, ValidationError
from .nn import Embedding, Linear, Lstm, Module
from .tape import Tensor

CHECKPOINT_MAGIC = b"AIPC"
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------
# Token inventory


@dataclass(frozen=True)
class TokenInventory:
    """Output units plus specials. Ids are contiguous: units 0..V-1, then
    <sos>, <eos>, then optional per-accent tokens used by the
    accent-token-augmented baseline."""

    units: tuple[str, ...]
    accent_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        names = list(self.units) + ["<sos>", "<eos>"] + list(self.accent_tokens)
        if len(set(names)) != len(names):
            raise ValidationError("inventory tokens must be unique")
        for name in names:
            if not name or any(ch.isspace() for ch in name):
                raise ValidationError(f"bad token {name!r}: empty or contains whitespace")

    @classmethod
    def default(cls) -> "TokenInventory":
        return cls(tuple(f"wp{i:03d}" for i in range(200)))

    @classmethod
    def from_units(cls, units) -> "TokenInventory":
        return cls(tuple(units))

    def with_accent_tokens(self, accent_names) -> "TokenInventory":
        return replace(self, accent_tokens=tuple(f"<acc:{n}>" for n in accent_names))

    @property
    def sos_id(self) -> int:
        return len(self.units)

    @property
    def eos_id(self) -> int:
        return len(self.units) + 1

    @property
    def size(self) -> int:
        return len(self.units) + 2 + len(self.accent_tokens)

    def accent_token_id(self, accent_id: int) -> int:
        if not 0 <= accent_id < len(self.accent_tokens):
            raise ValidationError(f"no accent token for accent {accent_id}")
        return len(self.units) + 2 + accent_id

    def is_accent_token(self, token_id: int) -> bool:
        return token_id >= len(self.units) + 2

    def encode(self, transcript: str) -> list[int]:
        index = {u: i for i, u in enumerate(self.units)}
        ids = []
        for tok in transcript.split():
            if tok not in index:
                raise ValidationError(f"token '{tok}' not in inventory")
            ids.append(index[tok])
        return ids

    def decode(self, ids, keep_accent_tokens: bool = False) -> str:
        names = list(self.units) + ["<sos>", "<eos>"] + list(self.accent_tokens)
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.size:
                raise ValidationError(f"token id {i} out of range")
            if i in (self.sos_id, self.eos_id):
                continue
            if self.is_accent_token(i) and not keep_accent_tokens:
                continue
            out.append(names[i])
        return " ".join(out)

    def to_dict(self) -> dict:
        return {"units": list(self.units), "accent_tokens": list(self.accent_tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenInventory":
        return cls(tuple(d["units"]), tuple(d.get("accent_tokens", ())))


# --------------------------------------------------------------------------
# Architecture


@dataclass(frozen=True)
class Architecture:
    """Sizes of every trainable module. Desk-scale defaults; the full-size
    configuration (hidden 768/256/1024, 4 encoder layers, ...) is expressible
    by overriding fields."""

    feature_dim: int = 16
    num_accents: int = 3
    invariant_hidden: int = 64
    invariant_layers: int = 2
    specific_hidden: int = 32
    specific_layers: int = 2
    disc_hidden: int = 64
    recon_hidden: int = 128
    recon_layers: int = 2
    encoder_hidden: int = 128
    encoder_layers: int = 2
    decoder_hidden: int = 128
    decoder_layers: int = 2
    attention_dim: int = 64
    token_embed_dim: int = 32
    accent_embed_dim: int = 8
    frame_stack: int = 1
    dropout: float = 0.1
    accent_conditioned_encoder: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and v < 1:
                raise ValidationError(f"architecture field {f.name} must be >= 1, got {v}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def input_dim(self) -> int:
        return self.feature_dim * self.frame_stack

    @property
    def encoder_input_dim(self) -> int:
        extra = self.accent_embed_dim if self.accent_conditioned_encoder else 0
        return self.invariant_hidden + extra

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture fields: {sorted(unknown)}")
        return cls(**d)


# --------------------------------------------------------------------------
# Submodules


class Discriminator:
    """Per-frame accent classifier: 1-layer LSTM + linear + softmax rows."""

    def __init__(self, name: str, input_dim: int, hidden: int, num_accents: int,
                 seed: int, dropout: float):
        self.lstm = Lstm(f"{name}.lstm", input_dim, hidden, 1, seed, dropout)
        self.proj = Linear(f"{name}.proj", hidden, num_accents, seed)
        self.parts = [self.lstm, self.proj]

    def __call__(self, h: Tensor, training: bool = False) -> Tensor:
        out = self.lstm(h, training=training)
        return tape.softmax(self.proj(out), axis=-1)


class Reconstructor:
    """LSTM decoder + linear head that rebuilds input frames from the
    concatenated branch embeddings."""

    def __init__(self, name: str, input_dim: int, hidden: int, layers: int,
                 out_dim: int, seed: int, dropout: float):
        self.lstm = Lstm(f"{name}.lstm", input_dim, hidden, layers, seed, dropout)
        self.proj = Linear(f"{name}.proj", hidden, out_dim, seed)
        self.parts = [self.lstm, self.proj]

    def __call__(self, h: Tensor, training: bool = False) -> Tensor:
        return self.proj(self.lstm(h, training=training))


@dataclass
class DecoderState:
    lstm: list
    context: Tensor


class AttentionDecoder:
    """Token-embedding LSTM decoder with dot-product attention.

    Per step: input [embedding; previous context] -> LSTM stack -> query;
    scores = keys . query over encoder frames (padding masked), softmax,
    context; posterior = softmax(linear([top hidden; context])).
    """

    def __init__(self, name: str, inventory_size: int, embed_dim: int,
                 encoder_hidden: int, hidden: int, layers: int, attention_dim: int,
                 seed: int, dropout: float):
        self.embed = Embedding(f"{name}.embed", inventory_size, embed_dim, seed)
        self.lstm = Lstm(f"{name}.lstm", embed_dim + encoder_hidden, hidden, layers,
                         seed, dropout)
        self.key_proj = Linear(f"{name}.key", encoder_hidden, attention_dim, seed)
        self.query_proj = Linear(f"{name}.query", hidden, attention_dim, seed)
        self.out_proj = Linear(f"{name}.out", hidden + encoder_hidden, inventory_size, seed)
        self.encoder_hidden = encoder_hidden
        self.parts = [self.embed, self.lstm, self.key_proj, self.query_proj, self.out_proj]

    def keys(self, enc: Tensor) -> Tensor:
        return self.key_proj(enc)  # (B, T, A)

    def initial_state(self, batch: int) -> DecoderState:
        return DecoderState(self.lstm.initial_state(batch),
                            Tensor(np.zeros((batch, self.encoder_hidden))))

    def step(self, tokens: np.ndarray, state: DecoderState, enc: Tensor, keys: Tensor,
             enc_mask: np.ndarray, training: bool = False
             ) -> tuple[Tensor, Tensor, DecoderState]:
        """One decode step; returns (posterior (B, V), attention (B, T), state)."""
        batch, t_enc = enc.shape[0], enc.shape[1]
        emb = self.embed(np.asarray(tokens, dtype=np.int64))
        x = tape.concat([emb, state.context], axis=-1)
        h_top, lstm_state = self.lstm.step(x, state.lstm, training=training)
        query = tape.reshape(self.query_proj(h_top), (batch, -1, 1))
        scores = tape.reshape(tape.matmul(keys, query), (batch, t_enc))
        attention = tape.softmax(scores, axis=-1, mask=enc_mask.astype(bool))
        context = tape.reshape(tape.matmul(tape.reshape(attention, (batch, 1, t_enc)), enc),
                               (batch, self.encoder_hidden))
        posterior = tape.softmax(self.out_proj(tape.concat([h_top, context], axis=-1)),
                                 axis=-1)
        return posterior, attention, DecoderState(lstm_state, context)


# --------------------------------------------------------------------------
# Bundle


class ModelBundle:
    """All trainable modules plus their architecture and token inventory."""

    def __init__(self, arch: Architecture, inventory: TokenInventory, seed: int):
        self.arch = arch
        self.inventory = inventory
        self.seed = seed
        d = arch.dropout
        self.invariant_encoder = Lstm("invariant_encoder", arch.input_dim,
                                      arch.invariant_hidden, arch.invariant_layers,
                                      seed, d)
        self.specific_encoder = Lstm("specific_encoder", arch.input_dim,
                                     arch.specific_hidden, arch.specific_layers, seed, d)
        self.invariant_discriminator = Discriminator("invariant_discriminator",
                                                     arch.invariant_hidden,
                                                     arch.disc_hidden,
                                                     arch.num_accents, seed, d)
        self.specific_discriminator = Discriminator("specific_discriminator",
                                                    arch.specific_hidden, arch.disc_hidden,
                                                    arch.num_accents, seed, d)
        self.reconstructor = Reconstructor("reconstructor",
                                           arch.invariant_hidden + arch.specific_hidden,
                                           arch.recon_hidden, arch.recon_layers,
                                           arch.input_dim, seed, d)
        self.recognizer_encoder = Lstm("recognizer_encoder", arch.encoder_input_dim,
                                       arch.encoder_hidden, arch.encoder_layers, seed, d)
        self.recognizer_decoder = AttentionDecoder("recognizer_decoder", inventory.size,
                                                   arch.token_embed_dim,
                                                   arch.encoder_hidden,
                                                   arch.decoder_hidden,
                                                   arch.decoder_layers,
                                                   arch.attention_dim, seed, d)
        self.accent_embedding = Embedding("accent_embedding", arch.num_accents,
                                          arch.accent_embed_dim, seed)
        self.modules: dict[str, object] = {
            "invariant_encoder": self.invariant_encoder,
            "specific_encoder": self.specific_encoder,
            "invariant_discriminator": self.invariant_discriminator,
            "specific_discriminator": self.specific_discriminator,
            "reconstructor": self.reconstructor,
            "recognizer_encoder": self.recognizer_encoder,
            "recognizer_decoder": self.recognizer_decoder,
            "accent_embedding": self.accent_embedding,
        }
        # The recognizer consumes invariant embeddings directly, so these two
        # dimensions must agree by construction.
        if arch.encoder_input_dim - (arch.accent_embed_dim
                                     if arch.accent_conditioned_encoder else 0) \
                != arch.invariant_hidden:
            raise ValidationError("invariant embedding dim must equal recognizer "
                                  "encoder input dim")

    # Parameter plumbing -------------------------------------------------

    def _nn_parts(self, module) -> list[Module]:
        return module.parts if hasattr(module, "parts") else [module]

    def parameters_of(self, module_names) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name in module_names:
            if name not in self.modules:
                raise ValidationError(f"unknown module '{name}'")
            for part in self._nn_parts(self.modules[name]):
                out.update(part.parameters())
        return out

    def parameters(self) -> dict[str, Tensor]:
        return self.parameters_of(self.modules.keys())

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def rng_states(self) -> dict[str, dict]:
        states = {}
        for module in self.modules.values():
            for part in self._nn_parts(module):
                states[part.name] = part.rng.bit_generator.state
        return states

    def set_rng_states(self, states: dict[str, dict]) -> None:
        for module in self.modules.values():
            for part in self._nn_parts(module):
                if part.name in states:
                    part.rng.bit_generator.state = states[part.name]

    # Forward paths ------------------------------------------------------

    def encode_invariant(self, features: Tensor, training: bool = False) -> Tensor:
        return self.invariant_encoder(features, training=training)

    def encode_specific(self, features: Tensor, training: bool = False) -> Tensor:
        return self.specific_encoder(features, training=training)

    def forward_generators(self, features: Tensor,
                           training: bool = False) -> tuple[Tensor, Tensor]:
        return (self.encode_invariant(features, training),
                self.encode_specific(features, training))

    def reconstruct(self, h_invariant: Tensor, h_specific: Tensor,
                    training: bool = False) -> Tensor:
        return self.reconstructor(tape.concat([h_invariant, h_specific], axis=-1),
                                  training=training)

    def recognizer_encode(self, h_invariant: Tensor, accents: np.ndarray | None = None,
                          training: bool = False) -> Tensor:
        x = h_invariant
        if self.arch.accent_conditioned_encoder:
            if accents is None:
                raise ValidationError("accent-conditioned encoder needs accent ids")
            emb = self.accent_embedding(np.asarray(accents, dtype=np.int64))
            b, t = h_invariant.shape[0], h_invariant.shape[1]
            ones = np.ones((b, t, 1))
            tiled = tape.mul(tape.reshape(emb, (b, 1, -1)), ones)
            x = tape.concat([h_invariant, tiled], axis=-1)
        return self.recognizer_encoder(x, training=training)

    def recognize_teacher_forced(self, enc: Tensor, enc_mask: np.ndarray,
                                 targets: np.ndarray, training: bool = False
                                 ) -> tuple[Tensor, Tensor]:
        """Teacher-forced decode.

        ``targets``: (B, J) token ids starting with <sos> and (per real row)
        ending with <eos>; returns per-step posteriors (B, J-1, V) for the
        J-1 predicted positions and the attention rows (B, J-1, T).
        """
        targets = np.asarray(targets, dtype=np.int64)
        if targets.ndim != 2 or targets.shape[1] < 2:
            raise ValidationError("targets must be (B, J>=2) starting with <sos>")
        if (targets[:, 0] != self.inventory.sos_id).any():
            raise ValidationError("every target row must start with <sos>")
        batch, j = targets.shape
        keys = self.recognizer_decoder.keys(enc)
        state = self.recognizer_decoder.initial_state(batch)
        posts, attns = [], []
        for step in range(j - 1):
            posterior, attention, state = self.recognizer_decoder.step(
                targets[:, step], state, enc, keys, enc_mask, training=training)
            posts.append(posterior)
            attns.append(attention)
        return tape.stack_steps(posts), tape.stack_steps(attns)

    # Checkpoints ----------------------------------------------------------

    def save_checkpoint(self, path: str | Path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.arch, self.inventory, self.seed,
                        {k: p.data for k, p in self.parameters().items()}, meta or {})

    @classmethod
    def load(cls, path: str | Path,
             expect_arch: Architecture | None = None) -> tuple["ModelBundle", dict]:
        header, arrays = read_checkpoint(path)
        arch = Architecture.from_dict(header["arch"])
        if expect_arch is not None and arch != expect_arch:
            diff = [k for k in arch.to_dict()
                    if arch.to_dict()[k] != expect_arch.to_dict()[k]]
            raise ConfigError(f"checkpoint architecture mismatch on fields: {diff}")
        inventory = TokenInventory.from_dict(header["inventory"])
        bundle = cls(arch, inventory, int(header["seed"]))
        params = bundle.parameters()
        if set(params) != set(arrays):
            missing = sorted(set(params) ^ set(arrays))
            raise DataError(f"checkpoint parameter names mismatch: {missing[:5]}")
        for name, tensor in params.items():
            if tensor.data.shape != arrays[name].shape:
                raise DataError(f"checkpoint tensor {name}: shape {arrays[name].shape} "
                                f"!= expected {tensor.data.shape}")
            tensor.data = arrays[name]
        return bundle, header.get("meta", {})


def build_targets(inventory: TokenInventory, transcript: str,
                  accent_id: int | None = None) -> list[int]:
    """Decoder target ids: <sos>, the transcript units, the accent token when
    the inventory carries accent tokens, <eos>. Training and validation share
    this so teacher forcing always sees the same sequences."""
    ids = [inventory.sos_id] + inventory.encode(transcript)
    if accent_id is not None and inventory.accent_tokens:
        ids.append(inventory.accent_token_id(accent_id))
    ids.append(inventory.eos_id)
    return ids


# --------------------------------------------------------------------------
# Checkpoint container (also reused for optimizer state)


def save_checkpoint(path: str | Path, arch: Architecture, inventory: TokenInventory,
                    seed: int, arrays: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(arrays.keys())
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": arch.to_dict(),
        "inventory": inventory.to_dict(),
        "seed": int(seed),
        "meta": meta,
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [CHECKPOINT_MAGIC,
           np.array([CHECKPOINT_VERSION], dtype="<u4").tobytes(),
           np.array([len(blob)], dtype="<u8").tobytes(),
           blob]
    for n in names:
        out.append(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())
    path.write_bytes(b"".join(out))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    version = int(np.frombuffer(blob[4:8], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(blob[8:16], dtype="<u8")[0])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = 8 * int(np.prod(shape)) if shape else 8
        chunk = blob[offset:offset + size]
        if len(chunk) != size:
            raise DataError(f"{path}: truncated tensor payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += size
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, arrays
