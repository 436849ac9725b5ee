"""Gradient and semantics tests for the autodiff tape.

Every op is checked against the central-difference oracle on several random
small instances; a few composite graphs (shared subexpressions, broadcasts)
guard the accumulation logic.
"""

from __future__ import annotations

import numpy as np
import pytest

from accentasr import tape
from gradcheck import assert_gradients_match, central_difference


def _check(build, shapes, seeds=range(4), eps=1e-5):
    """build(tensors) -> scalar Tensor; checked against finite differences."""
    for seed in seeds:
        rng = np.random.default_rng(seed)
        arrays = [rng.standard_normal(s) for s in shapes]

        def f(arrs):
            ts = [tape.Tensor(a, requires_grad=True) for a in arrs]
            return build(ts).item()

        ts = [tape.Tensor(a, requires_grad=True) for a in arrays]
        loss = build(ts)
        loss.backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
        numeric = central_difference(f, arrays, eps=eps)
        assert_gradients_match(analytic, numeric)


def test_add_mul_broadcast():
    _check(lambda ts: tape.reduce_sum(tape.mul(tape.add(ts[0], ts[1]), ts[2])),
           [(3, 4), (4,), (3, 1)])


def test_matmul():
    _check(lambda ts: tape.reduce_sum(tape.matmul(ts[0], ts[1])), [(3, 4), (4, 2)])


def test_matmul_batched():
    _check(lambda ts: tape.reduce_sum(tape.matmul(ts[0], ts[1])), [(2, 3, 4), (2, 4, 2)])


def test_matmul_broadcast_weights():
    # (B, T, D) @ (D, H): the shared weight accumulates over the batch.
    _check(lambda ts: tape.reduce_sum(tape.matmul(ts[0], ts[1])), [(2, 3, 4), (4, 5)])


def test_nonlinearities():
    for fn in (tape.tanh, tape.sigmoid, tape.exp):
        _check(lambda ts, fn=fn: tape.reduce_sum(fn(ts[0])), [(5, 3)])


def test_log_positive():
    def build(ts):
        return tape.reduce_sum(tape.log(tape.add(tape.mul(ts[0], ts[0]), 0.5)))

    _check(build, [(4, 3)])


def test_log_floor_zero_slope_below_clamp():
    x = tape.Tensor(np.array([1e-15, 0.5]), requires_grad=True)
    y = tape.reduce_sum(tape.log(x, floor=1e-12))
    y.backward()
    assert y.data == pytest.approx(np.log(1e-12) + np.log(0.5))
    assert x.grad[0] == 0.0
    assert x.grad[1] == pytest.approx(2.0)


def test_softmax_rows_sum_to_one_and_grads():
    _check(lambda ts: tape.reduce_sum(tape.mul(tape.softmax(ts[0], axis=-1), ts[1])),
           [(4, 5), (4, 5)])
    rng = np.random.default_rng(0)
    p = tape.softmax(tape.Tensor(rng.standard_normal((6, 7))), axis=-1)
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_mask_zeroes_positions():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5))
    mask = np.array([[True, True, False, False, True],
                     [True, True, True, True, True]])
    p = tape.softmax(tape.Tensor(x), axis=-1, mask=mask)
    assert p.data[0, 2] == pytest.approx(0.0, abs=1e-300)
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-12)

    # Gradients w.r.t. unmasked logits still match finite differences.
    def build(ts):
        w = np.arange(10, dtype=np.float64).reshape(2, 5)
        return tape.reduce_sum(tape.mul(tape.softmax(ts[0], axis=-1, mask=mask), w))

    _check(build, [(2, 5)])


def test_reductions_and_reshape():
    _check(lambda ts: tape.reduce_mean(tape.reshape(ts[0], (6, 2))), [(3, 4)])
    _check(lambda ts: tape.reduce_sum(tape.reduce_mean(ts[0], axis=1)), [(3, 4)])
    _check(lambda ts: tape.reduce_sum(tape.reduce_sum(ts[0], axis=0, keepdims=True)),
           [(3, 4)])


def test_concat_and_slicing():
    def build(ts):
        c = tape.concat([ts[0], ts[1]], axis=-1)
        return tape.reduce_sum(tape.mul(c[:, 1:4], c[:, 1:4]))

    _check(build, [(3, 3), (3, 2)])


def test_stack_steps():
    def build(ts):
        s = tape.stack_steps([ts[0], ts[1], ts[2]])
        return tape.reduce_sum(tape.tanh(s))

    _check(build, [(2, 3), (2, 3), (2, 3)])


def test_gather_rows():
    idx = np.array([0, 2, 2, 1])

    def build(ts):
        rows = tape.gather_rows(ts[0], idx)
        return tape.reduce_sum(tape.mul(rows, rows))

    _check(build, [(3, 4)])


def test_shared_subexpression_accumulates():
    # y = sum(x*x) + sum(x): grad = 2x + 1.
    x = tape.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = tape.add(tape.reduce_sum(tape.mul(x, x)), tape.reduce_sum(x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_reverse_gradient_identity_forward_scaled_negative_backward():
    x = tape.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = tape.reverse_gradient(x, scale=3.0)
    np.testing.assert_array_equal(y.data, x.data)
    tape.reduce_sum(tape.mul(y, np.array([5.0, 7.0]))).backward()
    np.testing.assert_allclose(x.grad, [-15.0, -21.0])


def test_reverse_gradient_scale_zero_kills_gradient():
    x = tape.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    tape.reduce_sum(tape.reverse_gradient(x, scale=0.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_dropout_inverted_scaling_and_grad():
    rng = np.random.default_rng(7)
    x = tape.Tensor(np.ones((1000,)), requires_grad=True)
    y = tape.dropout(x, 0.25, rng)
    kept = y.data != 0
    assert abs(kept.mean() - 0.75) < 0.05
    np.testing.assert_allclose(y.data[kept], 1.0 / 0.75)
    tape.reduce_sum(y).backward()
    np.testing.assert_allclose(x.grad[kept], 1.0 / 0.75)
    np.testing.assert_allclose(x.grad[~kept], 0.0)


def test_no_grad_builds_no_graph():
    x = tape.Tensor(np.ones((2, 2)), requires_grad=True)
    with tape.no_grad():
        y = tape.mul(x, x)
    assert not y.requires_grad
    assert y._parents == ()


def test_backward_requires_scalar():
    x = tape.Tensor(np.ones((2,)), requires_grad=True)
    with pytest.raises(ValueError):
        tape.mul(x, 2.0).backward()


def test_deep_graph_no_recursion_limit():
    x = tape.Tensor(np.array([0.1]), requires_grad=True)
    y = x
    for _ in range(5000):
        y = tape.add(y, x)
    tape.reduce_sum(y).backward()
    assert x.grad[0] == pytest.approx(5001.0)
