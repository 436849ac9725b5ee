"""Reverse-mode automatic differentiation over numpy arrays.

A minimal tape: each operation returns a :class:`Tensor` that remembers its
parents and a closure that routes the upstream gradient to them. Calling
``backward()`` on a scalar walks the graph once in reverse topological order.
Everything is float64; gradients of every op are verified against central
differences in the test suite, which is what makes a hand-rolled tape safe to
ship here.

Inference paths wrap themselves in :func:`no_grad` so no graph is built.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "grad_enabled",
    "matmul",
    "concat",
    "stack_steps",
    "gather_rows",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "reduce_sum",
    "reduce_mean",
    "reshape",
    "reverse_gradient",
    "dropout",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph building inside the context (pure forward compute)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse mode.

    ``grad`` stays ``None`` until ``backward()`` reaches the node; leaves
    created with ``requires_grad=True`` are trainable parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable parent."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            fn = node._backward
            if fn is not None:
                fn(node.grad)

    # Operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("division only by python scalars")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative postorder; graphs routinely exceed the recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# Arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """np.matmul semantics for ndim >= 2 operands, batched dims included."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _node(data, (a, b), backward)


# Shape ops ---------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _node(data, (x,), backward)


def concat(xs: Iterable[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    data = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for x, piece in zip(xs, pieces):
            if x.requires_grad:
                _accumulate(x, piece)

    return _node(data, tuple(xs), backward)


def stack_steps(xs: Sequence[Tensor]) -> Tensor:
    """Stack per-step (B, H) tensors into (B, T, H) along a new axis 1."""
    xs = [as_tensor(x) for x in xs]
    data = np.stack([x.data for x in xs], axis=1)

    def backward(g):
        for t, x in enumerate(xs):
            if x.requires_grad:
                _accumulate(x, g[:, t])

    return _node(data, tuple(xs), backward)


def _getitem(x: Tensor, key) -> Tensor:
    data = x.data[key]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        _accumulate(x, full)

    return _node(data, (x,), backward)


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup (embedding): returns ``table[idx]`` for an int index array."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    return _node(data, (table,), backward)


# Elementwise nonlinearities ----------------------------------------------


def tanh(x) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - data * data))

    return _node(data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    data = expit(x.data)

    def backward(g):
        _accumulate(x, g * data * (1.0 - data))

    return _node(data, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * data)

    return _node(data, (x,), backward)


def log(x, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` set, inputs are clamped below (zero slope
    under the clamp), matching the documented log-floor behavior."""
    x = as_tensor(x)
    if floor is None:
        clipped = x.data
        mask = None
    else:
        clipped = np.maximum(x.data, floor)
        mask = x.data > floor
    data = np.log(clipped)

    def backward(g):
        gx = g / clipped
        if mask is not None:
            gx = gx * mask
        _accumulate(x, gx)

    return _node(data, (x,), backward)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax; ``mask`` (bool, True = keep) zeroes masked positions.

    Fully masked slices are the caller's responsibility to avoid.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -1e30)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - dot))

    return _node(data, (x,), backward)


# Reductions ---------------------------------------------------------------


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    return _node(data, (x,), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        count = x.data.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Special ops ---------------------------------------------------------------


def reverse_gradient(x, scale: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -scale."""
    x = as_tensor(x)
    data = x.data

    def backward(g):
        _accumulate(x, -scale * g)

    return _node(data, (x,), backward)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; draws one mask from ``rng`` per call."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    data = x.data * keep

    def backward(g):
        _accumulate(x, g * keep)

    return _node(data, (x,), backward)
