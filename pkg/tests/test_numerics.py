import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgmsv.numerics import (SGD, Adam, NonFiniteError, OptimizerState, ParamSet, add, conv2d,
                            conv2d_backward, conv_output_size, ensure_finite, finite_diff_grad,
                            matmul, relu, relative_error, sgd_step)


def test_add_and_relu():
    np.testing.assert_array_equal(add([1, 2], [3, 4]), [4, 6])
    np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        add([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        add([np.inf], [1.0])
    with pytest.raises(NonFiniteError):
        ensure_finite(np.array([np.nan]))


def test_identity_filter_is_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 7, 5))
    w = np.zeros((3, 3, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    np.testing.assert_array_equal(conv2d(x, w), x)


@pytest.mark.parametrize("n,f,s,p", [(16, 5, 2, 2), (15, 5, 2, 2), (8, 3, 1, 1), (9, 3, 2, 0), (7, 7, 3, 0)])
def test_conv_output_extent(n, f, s, p):
    x = np.ones((1, 1, n, n))
    out = conv2d(x, np.ones((1, 1, f, f)), stride=s, pad=p)
    assert out.shape[2:] == ((n + 2 * p - f) // s + 1,) * 2 == (conv_output_size(n, f, s, p),) * 2


def _conv_bruteforce(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            win = xp[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.tensordot(win, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 9, 6))
    w = rng.standard_normal((4, 3, 5, 5))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(conv2d(x, w, b, 2, 2), _conv_bruteforce(x, w, b, 2, 2), atol=1e-12)


def test_conv_linearity():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 1, 2, 10, 8))
    w = rng.standard_normal((3, 2, 3, 3))
    np.testing.assert_allclose(conv2d(a + b, w, stride=2, pad=1),
                               conv2d(a, w, stride=2, pad=1) + conv2d(b, w, stride=2, pad=1), atol=1e-10)


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 2, 7, 6))
    w = rng.standard_normal((3, 2, 5, 5))
    b = rng.standard_normal(3)
    up = rng.standard_normal(conv2d(x, w, b, 2, 2).shape)
    dx, dw, db = conv2d_backward(up, x, w, 2, 2)
    num = finite_diff_grad(lambda: float(np.sum(conv2d(x, w, b, 2, 2) * up)), {"x": x, "w": w, "b": b})
    for a, n in ((dx, num["x"]), (dw, num["w"]), (db, num["b"])):
        assert relative_error(a, n) < 1e-8


def _params(value, grad):
    ps = ParamSet()
    p = ps.add("p", np.array([value]))
    p.grad[...] = grad
    return ps


def test_sgd_plain_step():
    ps = _params(1.0, 0.5)
    SGD(ps, lr=0.1).step()
    assert ps["p"].value[0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_momentum_two_steps():
    g, lr = 0.7, 0.05
    ps = _params(2.0, g)
    opt = SGD(ps, lr=lr, momentum=0.9)
    opt.step()
    opt.step()
    assert ps["p"].value[0] == pytest.approx(2.0 - lr * g - lr * 1.9 * g, abs=1e-14)
    assert opt.state.step_count == 2


@pytest.mark.parametrize("make", [lambda ps: SGD(ps, lr=0.1), lambda ps: SGD(ps, lr=0.1, momentum=0.9),
                                  lambda ps: Adam(ps, lr=0.1)])
def test_zero_gradient_step_is_identity(make):
    ps = _params(3.25, 0.0)
    opt = make(ps)
    opt.step()
    assert ps["p"].value[0] == 3.25
    assert opt.state.step_count == 1


def test_functional_step_and_nonfinite_gradient():
    ps = _params(1.0, 0.5)
    st_ = OptimizerState(lr=0.1)
    sgd_step(ps, st_)
    assert ps["p"].value[0] == pytest.approx(0.95)
    ps["p"].grad[0] = np.nan
    with pytest.raises(NonFiniteError):
        sgd_step(ps, st_)


def test_adam_first_step_moves_by_lr():
    ps = _params(1.0, 123.0)
    Adam(ps, lr=0.01).step()
    assert ps["p"].value[0] == pytest.approx(0.99, abs=1e-9)


def test_paramset_rejects_duplicates_and_bad_shapes():
    ps = ParamSet()
    ps.add("w", np.zeros(3))
    with pytest.raises(KeyError):
        ps.add("w", np.zeros(3))
    with pytest.raises(ValueError):
        ps.set_grads({"w": np.zeros(4)})


def test_finite_diff_square():
    p = np.array([3.0])
    g = finite_diff_grad(lambda: float(p[0] ** 2), {"p": p}, 1e-5)
    assert abs(g["p"][0] - 6.0) < 1e-8
    assert p[0] == 3.0


def test_finite_diff_constant_and_paramset():
    ps = ParamSet()
    ps.add("a", np.ones((2, 3)))
    g = finite_diff_grad(lambda: 4.0, ps)
    np.testing.assert_array_equal(g["a"], 0.0)


def test_finite_diff_raises_on_nonfinite_probe():
    p = np.array([0.0])
    with pytest.raises(NonFiniteError):
        finite_diff_grad(lambda: 1.0 / p[0] if p[0] > 0 else np.inf, {"p": p})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(-2, 2))
def test_finite_diff_polynomials(coeffs, x0):
    p = np.array([x0])
    poly = np.polynomial.Polynomial(coeffs)
    g = finite_diff_grad(lambda: float(poly(p[0])), {"p": p})["p"][0]
    exact = poly.deriv()(x0)
    assert abs(g - exact) <= 1e-6 * max(abs(exact), 1.0)
