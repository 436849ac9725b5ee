"""Neural building blocks on the tape: linear, embedding, LSTM stacks.

Every module owns an independent RNG stream derived from (seed, module name),
used for both init and dropout. That keeps parameter draws and dropout masks
of one module unaffected by whether *other* modules exist or run, which is
what makes the cross-system equivalence guarantees (reversal scale 0, ASR
weight 0) hold step for step rather than only in expectation.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import tape
from .tape import Tensor


def module_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-module stream: same (seed, name) -> same draws."""
    key = zlib.crc32(name.encode("utf-8")) & 0xFFFFFFFF
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


class Module:
    """A named bag of parameters plus its private RNG stream."""

    def __init__(self, name: str, seed: int):
        self.name = name
        self.rng = module_rng(seed, name)
        self._params: dict[str, Tensor] = {}

    def _new_param(self, key: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params[f"{self.name}.{key}"] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def param_count(self) -> int:
        return sum(p.data.size for p in self._params.values())


class Linear(Module):
    def __init__(self, name: str, in_dim: int, out_dim: int, seed: int):
        super().__init__(name, seed)
        self.in_dim, self.out_dim = in_dim, out_dim
        k = 1.0 / np.sqrt(in_dim)
        self.w = self._new_param("w", self.rng.uniform(-k, k, (in_dim, out_dim)))
        self.b = self._new_param("b", self.rng.uniform(-k, k, (out_dim,)))

    def __call__(self, x: Tensor) -> Tensor:
        return tape.add(tape.matmul(x, self.w), self.b)


class Embedding(Module):
    def __init__(self, name: str, rows: int, dim: int, seed: int):
        super().__init__(name, seed)
        self.rows, self.dim = rows, dim
        self.table = self._new_param("table", 0.1 * self.rng.standard_normal((rows, dim)))

    def __call__(self, idx: np.ndarray) -> Tensor:
        return tape.gather_rows(self.table, idx)


class Lstm(Module):
    """Unidirectional multi-layer LSTM.

    Gate order i, f, g, o in the fused (in+hidden) x 4H weights; forget-gate
    bias initialized to 1. Inter-layer dropout only (none after the top
    layer), drawn from the module's own stream at training time.
    """

    def __init__(self, name: str, input_dim: int, hidden: int, layers: int, seed: int,
                 dropout: float = 0.0):
        super().__init__(name, seed)
        self.input_dim, self.hidden, self.layers = input_dim, hidden, layers
        self.dropout = dropout
        self._wx, self._wh, self._b = [], [], []
        k = 1.0 / np.sqrt(hidden)
        for layer in range(layers):
            d = input_dim if layer == 0 else hidden
            self._wx.append(self._new_param(f"l{layer}.wx", self.rng.uniform(-k, k, (d, 4 * hidden))))
            self._wh.append(self._new_param(f"l{layer}.wh", self.rng.uniform(-k, k, (hidden, 4 * hidden))))
            b = self.rng.uniform(-k, k, (4 * hidden,))
            b[hidden:2 * hidden] = 1.0
            self._b.append(self._new_param(f"l{layer}.b", b))

    def initial_state(self, batch: int) -> list[tuple[Tensor, Tensor]]:
        zero = np.zeros((batch, self.hidden))
        return [(Tensor(zero), Tensor(zero)) for _ in range(self.layers)]

    def _cell(self, layer: int, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h_prev, c_prev = state
        pre = tape.add(tape.add(tape.matmul(x, self._wx[layer]),
                                tape.matmul(h_prev, self._wh[layer])), self._b[layer])
        n = self.hidden
        i = tape.sigmoid(pre[:, 0 * n:1 * n])
        f = tape.sigmoid(pre[:, 1 * n:2 * n])
        g = tape.tanh(pre[:, 2 * n:3 * n])
        o = tape.sigmoid(pre[:, 3 * n:4 * n])
        c = tape.add(tape.mul(f, c_prev), tape.mul(i, g))
        h = tape.mul(o, tape.tanh(c))
        return h, c

    def step(self, x: Tensor, state: list[tuple[Tensor, Tensor]],
             training: bool = False) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
        """One timestep through all layers; returns (top hidden, new state)."""
        new_state = []
        inp = x
        for layer in range(self.layers):
            h, c = self._cell(layer, inp, state[layer])
            new_state.append((h, c))
            inp = h
            if training and self.dropout > 0.0 and layer < self.layers - 1:
                inp = tape.dropout(inp, self.dropout, self.rng)
        return inp, new_state

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        """Full sequence (B, T, D) -> (B, T, H) of top-layer hiddens.

        Padded frames run through the recurrence like any other; callers mask
        them out of losses, so no gradient flows from them.
        """
        batch, steps = x.shape[0], x.shape[1]
        state = self.initial_state(batch)
        outs = []
        for t in range(steps):
            h, state = self.step(x[:, t, :], state, training=training)
            outs.append(h)
        return tape.stack_steps(outs)
