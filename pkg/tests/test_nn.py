"""Layer-level tests: shapes, zero-init linearity, gradients vs the oracle,
and the per-module RNG stream isolation the equivalence runs rely on."""

from __future__ import annotations

import numpy as np
import pytest

from accentasr import nn, tape
from gradcheck import assert_gradients_match, central_difference


def test_module_rng_streams_are_independent_and_reproducible():
    a1 = nn.module_rng(7, "alpha").standard_normal(4)
    a2 = nn.module_rng(7, "alpha").standard_normal(4)
    b = nn.module_rng(7, "beta").standard_normal(4)
    other_seed = nn.module_rng(8, "alpha").standard_normal(4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, other_seed)


def test_linear_shapes_and_grad():
    lin = nn.Linear("lin", 3, 2, seed=0)
    x = tape.Tensor(np.random.default_rng(0).standard_normal((5, 3)))
    y = lin(x)
    assert y.shape == (5, 2)

    arrays = [lin.w.data.copy(), lin.b.data.copy()]

    def f(arrs):
        lin.w.data, lin.b.data = arrs
        return tape.reduce_sum(tape.tanh(lin(x))).item()

    loss = tape.reduce_sum(tape.tanh(lin(x)))
    loss.backward()
    analytic = [lin.w.grad, lin.b.grad]
    numeric = central_difference(f, arrays)
    assert_gradients_match(analytic, numeric)


def test_embedding_lookup_and_grad_accumulation():
    emb = nn.Embedding("emb", 4, 3, seed=0)
    idx = np.array([1, 1, 3])
    out = emb(idx)
    np.testing.assert_array_equal(out.data[0], emb.table.data[1])
    tape.reduce_sum(out).backward()
    # Row 1 referenced twice, row 3 once, rows 0/2 never.
    np.testing.assert_allclose(emb.table.grad[1], 2.0)
    np.testing.assert_allclose(emb.table.grad[3], 1.0)
    np.testing.assert_allclose(emb.table.grad[0], 0.0)


def test_lstm_zero_params_zero_input_zero_output():
    lstm = nn.Lstm("z", input_dim=3, hidden=4, layers=2, seed=0)
    for p in lstm.parameters().values():
        p.data[...] = 0.0
    x = tape.Tensor(np.zeros((2, 5, 3)))
    out = lstm(x)
    np.testing.assert_array_equal(out.data, 0.0)


def test_lstm_forget_bias_init():
    lstm = nn.Lstm("f", input_dim=3, hidden=4, layers=1, seed=0)
    b = lstm.parameters()["f.l0.b"].data
    np.testing.assert_array_equal(b[4:8], 1.0)


def test_lstm_sequence_matches_manual_steps():
    lstm = nn.Lstm("m", input_dim=2, hidden=3, layers=2, seed=1)
    x = np.random.default_rng(2).standard_normal((1, 4, 2))
    seq = lstm(tape.Tensor(x)).data
    state = lstm.initial_state(1)
    for t in range(4):
        h, state = lstm.step(tape.Tensor(x[:, t, :]), state)
        np.testing.assert_allclose(seq[:, t, :], h.data, atol=1e-12)


def test_lstm_gradients_full_parameter_check():
    lstm = nn.Lstm("g", input_dim=2, hidden=3, layers=2, seed=3)
    x = np.random.default_rng(4).standard_normal((2, 3, 2))
    names = sorted(lstm.parameters())
    params = lstm.parameters()
    arrays = [params[n].data.copy() for n in names]
    weights = np.random.default_rng(5).standard_normal((2, 3, 3))

    def f(arrs):
        for n, a in zip(names, arrays):
            params[n].data = a
        return tape.reduce_sum(tape.mul(lstm(tape.Tensor(x)), weights)).item()

    loss = tape.reduce_sum(tape.mul(lstm(tape.Tensor(x)), weights))
    loss.backward()
    analytic = [params[n].grad for n in names]
    numeric = central_difference(f, arrays)
    assert_gradients_match(analytic, numeric)


def test_lstm_input_gradient():
    lstm = nn.Lstm("gi", input_dim=2, hidden=3, layers=1, seed=6)
    x0 = np.random.default_rng(7).standard_normal((1, 4, 2))

    def f(arrs):
        return tape.reduce_sum(lstm(tape.Tensor(arrs[0]))).item()

    xt = tape.Tensor(x0.copy(), requires_grad=True)
    tape.reduce_sum(lstm(xt)).backward()
    numeric = central_difference(f, [x0.copy()])
    assert_gradients_match([xt.grad], numeric)


def test_lstm_dropout_only_between_layers_and_seeded():
    x = np.random.default_rng(8).standard_normal((2, 5, 3))
    one = nn.Lstm("d1", 3, 4, layers=1, seed=9, dropout=0.5)
    # Single layer: no dropout sites, training output equals eval output.
    np.testing.assert_array_equal(one(tape.Tensor(x), training=True).data,
                                  one(tape.Tensor(x)).data)
    two_a = nn.Lstm("d2", 3, 4, layers=2, seed=9, dropout=0.5)
    two_b = nn.Lstm("d2", 3, 4, layers=2, seed=9, dropout=0.5)
    ya = two_a(tape.Tensor(x), training=True).data
    yb = two_b(tape.Tensor(x), training=True).data
    np.testing.assert_array_equal(ya, yb)  # same stream, same masks
    assert not np.array_equal(ya, two_a(tape.Tensor(x)).data)


def test_param_count():
    lstm = nn.Lstm("c", input_dim=5, hidden=7, layers=2, seed=0)
    expected = 4 * 7 * (5 + 7 + 1) + 4 * 7 * (7 + 7 + 1)
    assert lstm.param_count() == expected
    lin = nn.Linear("cl", 5, 3, seed=0)
    assert lin.param_count() == 5 * 3 + 3
