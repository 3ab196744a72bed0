import numpy as np
import pytest
from hypothesis import given, strategies as st

from hsitrack.numeric import (
    DimensionError, Tape, Var, absolute, add, concat, div, gelu, grad_check, layer_norm,
    linear_apply, log, matmul, maximum, mean, minimum, mul, param, relu, reshape, sigmoid,
    softmax, softplus, square, sub, sum_, take, transpose,
)


def test_linear_apply_identity_input():
    out = linear_apply(np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
    np.testing.assert_array_equal(out.value, [[1, 2], [3, 4]])


def test_linear_apply_zero_input_passes_bias():
    out = linear_apply(np.zeros((2, 3)), np.random.default_rng(0).normal(size=(3, 2)), np.array([5.0, 6.0]))
    np.testing.assert_array_equal(out.value, [[5, 6], [5, 6]])


def test_linear_apply_gradients_match_finite_differences(rng):
    x, w, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2))), param(rng.normal(size=(1, 2)))
    rep = grad_check(lambda: sum_(square(linear_apply(x, w, b))), {"x": x, "w": w, "b": b},
                     tol=1e-6, floor=1e-8)
    assert rep.passed, rep.summary()


def test_linear_apply_shape_errors():
    with pytest.raises(DimensionError):
        linear_apply(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        linear_apply(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(3))


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**16))
def test_linear_apply_is_affine(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(3, 4)), r.normal(size=(3, 4))
    w, bias = r.normal(size=(4, 5)), r.normal(size=5)
    f = lambda v: linear_apply(v, w, bias).value
    lhs = f(a * x + b * y)
    rhs = a * f(x) + b * f(y) - (a + b - 1) * bias
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + np.abs(rhs).max()))


def test_layer_norm_constant_row_is_zero():
    out = layer_norm(np.ones((1, 4)), np.ones(4), np.zeros(4))
    np.testing.assert_array_equal(out.value, np.zeros((1, 4)))


def test_layer_norm_two_values():
    out = layer_norm(np.array([[0.0, 2.0]]), np.ones(2), np.zeros(2)).value
    np.testing.assert_allclose(out, [[-1, 1]], atol=1e-5)
    np.testing.assert_allclose(out, np.array([[-1, 1]]) / np.sqrt(1 + 1e-5), atol=1e-14)


def test_layer_norm_zero_gain_collapses_to_shift(rng):
    shift = np.full(5, 7.0)
    out = layer_norm(rng.normal(size=(3, 5)), np.zeros(5), shift)
    np.testing.assert_array_equal(out.value, np.full((3, 5), 7.0))


def test_layer_norm_gradients(rng):
    x, g, b = param(rng.normal(size=(4, 6))), param(rng.normal(size=6)), param(rng.normal(size=6))
    w = rng.normal(size=(4, 6))
    rep = grad_check(lambda: sum_(mul(layer_norm(x, g, b), w)), {"x": x, "g": g, "b": b}, floor=1e-8)
    assert rep.passed, rep.summary()


@given(st.integers(0, 2**16))
def test_softmax_rows_sum_to_one(seed):
    x = np.random.default_rng(seed).normal(scale=30, size=(5, 7))
    s = softmax(x).value
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


@pytest.mark.parametrize("op", [
    lambda a, b: add(a, b), lambda a, b: sub(a, b), lambda a, b: mul(a, b),
    lambda a, b: div(a, add(square(b), 1.0)), lambda a, b: maximum(a, b), lambda a, b: minimum(a, b),
    lambda a, b: matmul(a, transpose(b, (1, 0))), lambda a, b: concat([a, b], axis=0),
])
def test_binary_ops_gradients(op, rng):
    a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(3, 4)))
    rep = grad_check(lambda: sum_(mul(op(a, b), op(a, b))), {"a": a, "b": b}, floor=1e-8)
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("op", [relu, absolute, sigmoid, softplus, gelu, square,
                                lambda v: log(add(square(v), 1.0)), softmax,
                                lambda v: reshape(v, (4, 3)), lambda v: take(v, (slice(None), 1)),
                                mean])
def test_unary_ops_gradients(op, rng):
    v = param(rng.normal(size=(3, 4)))
    w = rng.normal(size=op(Var(v.value)).shape)
    rep = grad_check(lambda: sum_(mul(op(v), w)), {"v": v}, floor=1e-8)
    assert rep.passed, rep.summary()


def test_broadcast_gradient_sums_over_expanded_axes():
    a = param(np.ones((1, 3)))
    with Tape() as tape:
        loss = sum_(add(a, np.zeros((4, 3))))
        tape.backward(loss, [a])
    np.testing.assert_array_equal(a.grad, np.full((1, 3), 4.0))


def test_unused_parameter_gets_exact_zero_and_tape_is_cleared():
    used, unused = param(np.ones(3)), param(np.ones(2))
    with Tape() as tape:
        loss = sum_(square(used))
        assert len(tape) > 0
        tape.backward(loss, [used, unused])
        assert len(tape) == 0
    np.testing.assert_array_equal(unused.grad, 0.0)
    np.testing.assert_array_equal(used.grad, 2.0)


def test_nothing_recorded_without_tape():
    x = param(np.ones(2))
    y = sum_(square(x))
    assert float(y.value) == 2.0 and x.grad is None


def test_backward_needs_scalar():
    x = param(np.ones(2))
    with Tape() as tape:
        with pytest.raises(DimensionError):
            tape.backward(square(x), [x])


def test_gelu_matches_tanh_formula():
    v = np.linspace(-4, 4, 17)
    ref = 0.5 * v * (1 + np.tanh(np.sqrt(2 / np.pi) * (v + 0.044715 * v ** 3)))
    np.testing.assert_allclose(gelu(v).value, ref, rtol=1e-14, atol=1e-15)
