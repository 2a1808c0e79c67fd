"""Tests for the reverse-mode autodiff engine and the Adam optimizer."""

import numpy as np
import pytest

from conftest import finite_difference, relative_gradient_error
from mcan import autodiff as ad
from mcan.errors import ConfigError, ShapeMismatch


def test_sigmoid_at_zero():
    assert ad.sigmoid(ad.constant(0.0)).item() == 0.5


def test_tanh_at_zero():
    assert ad.tanh(ad.constant(0.0)).item() == 0.0


def test_matmul_hand_value():
    # [[1,2],[3,4]] @ [[1],[1]] = [[3],[7]]
    a = ad.constant([[1.0, 2.0], [3.0, 4.0]])
    b = ad.constant([[1.0], [1.0]])
    out = ad.matmul(a, b)
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_op():
    a = ad.constant(np.ones((2, 3)))
    b = ad.constant(np.ones((2, 3)))
    with pytest.raises(ShapeMismatch, match="matmul"):
        ad.matmul(a, b)


def test_add_shape_error():
    with pytest.raises(ShapeMismatch, match="add"):
        ad.add(ad.constant(np.ones(3)), ad.constant(np.ones(4)))


def test_backward_square():
    x = ad.parameter(3.0)
    loss = ad.square(x)
    loss.backward()
    assert loss.item() == 9.0
    assert x.grad == pytest.approx(6.0)


def test_backward_sigmoid_at_zero():
    x = ad.parameter(0.0)
    loss = ad.sigmoid(x)
    loss.backward()
    assert x.grad == pytest.approx(0.25)


def test_backward_requires_scalar():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ShapeMismatch, match="scalar"):
        (x * 2.0).backward()


def test_backward_idempotent_after_zero_grad():
    x = ad.parameter(2.0)

    def run():
        x.zero_grad()
        loss = ad.square(ad.sigmoid(x))
        loss.backward()
        return float(x.grad)

    assert run() == run()


def test_value_used_twice_accumulates_both_paths():
    # loss = x*x + 3x -> dloss/dx = 2x + 3
    x = ad.parameter(1.5)
    loss = ad.add(ad.multiply(x, x), ad.multiply(x, 3.0))
    loss.backward()
    assert x.grad == pytest.approx(2 * 1.5 + 3)

    numeric = finite_difference(
        lambda: ad.add(ad.multiply(x, x), ad.multiply(x, 3.0)).item(), x
    )
    assert relative_gradient_error(np.asarray(x.grad), numeric) < 1e-6


def test_three_layer_composite_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = ad.parameter(rng.normal(size=(4, 5)))
    b1 = ad.parameter(rng.normal(size=5))
    w2 = ad.parameter(rng.normal(size=(5, 3)))
    b2 = ad.parameter(rng.normal(size=3))
    w3 = ad.parameter(rng.normal(size=(3, 1)))
    x = ad.constant(rng.normal(size=(2, 4)))

    def forward():
        h1 = ad.tanh(ad.add(ad.matmul(x, w1), b1))
        h2 = ad.sigmoid(ad.add(ad.matmul(h1, w2), b2))
        return ad.vsum(ad.square(ad.matmul(h2, w3)))

    loss = forward()
    loss.backward()
    for p in (w1, b1, w2, b2, w3):
        numeric = finite_difference(lambda: forward().item(), p)
        assert relative_gradient_error(p.grad, numeric) < 1e-4


def test_broadcast_add_gradient():
    rng = np.random.default_rng(3)
    m = ad.parameter(rng.normal(size=(4, 3)))
    b = ad.parameter(rng.normal(size=3))

    def forward():
        return ad.vsum(ad.square(ad.add(m, b)))

    forward().backward()
    for p in (m, b):
        numeric = finite_difference(lambda: forward().item(), p)
        assert relative_gradient_error(p.grad, numeric) < 1e-5


def test_concat_take_reshape_gradients():
    rng = np.random.default_rng(11)
    a = ad.parameter(rng.normal(size=(2, 3)))
    b = ad.parameter(rng.normal(size=(2, 2)))

    def forward():
        joined = ad.concat([a, b], axis=1)
        picked = joined[:, [0, 2, 4]]
        return ad.vsum(ad.square(ad.reshape(picked, (6,))))

    forward().backward()
    for p in (a, b):
        numeric = finite_difference(lambda: forward().item(), p)
        assert relative_gradient_error(p.grad, numeric) < 1e-5


def test_softmax_rows_are_probability_vectors():
    rng = np.random.default_rng(5)
    x = ad.constant(rng.normal(scale=8.0, size=(50, 7)))
    y = ad.softmax(x, axis=-1).data
    assert np.all(y > 0)
    assert np.abs(y.sum(axis=-1) - 1.0).max() < 1e-12


def test_softmax_gradient():
    rng = np.random.default_rng(9)
    x = ad.parameter(rng.normal(size=(3, 4)))
    weights = rng.normal(size=(3, 4))

    def forward():
        return ad.vsum(ad.multiply(ad.softmax(x, axis=-1), weights))

    forward().backward()
    numeric = finite_difference(lambda: forward().item(), x)
    assert relative_gradient_error(x.grad, numeric) < 1e-5


def test_interleave_columns_forward_and_gradient():
    raw = ad.parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
    fill = ad.parameter(np.array([10.0, 20.0]))
    raw_cols = np.array([0, 2])
    fill_cols = np.array([1, 3])
    out = ad.interleave_columns(raw, fill, raw_cols, fill_cols, 4)
    assert np.array_equal(out.data, [[1.0, 10.0, 2.0, 20.0], [3.0, 10.0, 4.0, 20.0]])

    def forward():
        o = ad.interleave_columns(raw, fill, raw_cols, fill_cols, 4)
        return ad.vsum(ad.square(o))

    forward().backward()
    for p in (raw, fill):
        numeric = finite_difference(lambda: forward().item(), p)
        assert relative_gradient_error(p.grad, numeric) < 1e-5


def test_vsum_axis_and_mean_gradients():
    rng = np.random.default_rng(13)
    x = ad.parameter(rng.normal(size=(3, 4, 2)))

    def forward():
        return ad.vsum(ad.square(ad.vsum(x, axis=2)))

    forward().backward()
    numeric = finite_difference(lambda: forward().item(), x)
    assert relative_gradient_error(x.grad, numeric) < 1e-5

    x.zero_grad()
    loss = ad.vmean(x)
    loss.backward()
    assert np.allclose(x.grad, np.full(x.shape, 1.0 / x.data.size))


class TestAdam:
    def test_first_step_unit_gradient(self):
        # m_hat = v_hat = 1 after one step with g = 1, so the update is
        # -lr / (1 + eps) which is within 1e-9 of -lr.
        p = ad.parameter(np.zeros(4))
        state = ad.AdamState(learning_rate=0.0001)
        ad.adam_step([p], [np.ones(4)], state)
        assert np.abs(p.data - (-0.0001)).max() < 1e-9
        assert state.step == 1

    def test_zero_gradient_is_fixed_point(self):
        p = ad.parameter(np.array([1.0, -2.0]))
        before = p.data.copy()
        state = ad.AdamState()
        ad.adam_step([p], [np.zeros(2)], state)
        assert np.array_equal(p.data, before)

    def test_two_steps_constant_gradient_monotone(self):
        # Constant g: both steps move opposite to sign(g); hand-evaluating the
        # formulas gives m_hat = g, v_hat = g^2 each step, so each update is
        # close to -lr * sign(g).
        for g_sign in (1.0, -1.0):
            p = ad.parameter(np.zeros(1))
            state = ad.AdamState(learning_rate=0.01)
            ad.adam_step([p], [np.full(1, g_sign)], state)
            first = p.data.copy()
            ad.adam_step([p], [np.full(1, g_sign)], state)
            assert state.step == 2
            assert np.sign(first[0]) == -g_sign
            assert np.sign(p.data[0] - first[0]) == -g_sign


class TestDropout:
    def test_evaluation_is_identity(self):
        x = ad.constant(np.arange(10.0))
        out = ad.dropout(x, 0.7, training=False)
        assert np.array_equal(out.data, x.data)

    def test_rate_zero_identity_in_both_modes(self):
        x = ad.constant(np.arange(5.0))
        rng = np.random.default_rng(0)
        assert np.array_equal(ad.dropout(x, 0.0, True, rng).data, x.data)
        assert np.array_equal(ad.dropout(x, 0.0, False).data, x.data)

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            ad.dropout(ad.constant(np.ones(3)), 1.0, True, np.random.default_rng(0))

    def test_survivor_fraction_concentrates(self):
        rng = np.random.default_rng(42)
        x = ad.constant(np.ones(100_000))
        out = ad.dropout(x, 0.5, training=True, rng=rng)
        survivors = np.count_nonzero(out.data) / out.data.size
        assert 0.49 <= survivors <= 0.51
        # Inverted scaling: survivors are exactly 1 / (1 - rate).
        assert np.allclose(out.data[out.data != 0], 2.0)
