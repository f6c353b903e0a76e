"""Hyper-dual forward-mode AD against central finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnmpc.nlp.dual import Dual2, exp, log, seed_variables, sqrt


def composite(x, y):
    # mixes every supported elementary operation
    return exp(x * y) / (1.0 + x ** 2) + log(y) * sqrt(x + 2.0) - 3.0 * x + y / x


def fd_grad_hess(f, pt, h=1e-5):
    pt = np.asarray(pt, dtype=float)
    n = pt.size

    def at(v):
        return f(*v)

    grad = np.zeros(n)
    hess = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n); e[i] = h
        grad[i] = (at(pt + e) - at(pt - e)) / (2 * h)
        hess[i, i] = (at(pt + e) - 2 * at(pt) + at(pt - e)) / h ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n); ej[j] = h
            hess[i, j] = hess[j, i] = (
                at(pt + e + ej) - at(pt + e - ej)
                - at(pt - e + ej) + at(pt - e - ej)) / (4 * h ** 2)
    return grad, hess


def test_composite_matches_fd():
    pt = np.array([0.7, 1.3])
    x, y = seed_variables(pt[None, :])
    out = composite(x, y)
    g_fd, h_fd = fd_grad_hess(composite, pt)
    assert out.val[0] == pytest.approx(composite(*pt))
    np.testing.assert_allclose(out.grad[0], g_fd, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(out.hess[0], h_fd, rtol=1e-4, atol=1e-5)


def test_batched_evaluation_matches_loop():
    pts = np.array([[0.5, 2.0], [1.5, 0.25], [2.5, 1.0]])
    x, y = seed_variables(pts)
    out = composite(x, y)
    for i, pt in enumerate(pts):
        xi, yi = seed_variables(pt[None, :])
        single = composite(xi, yi)
        np.testing.assert_allclose(out.val[i], single.val[0])
        np.testing.assert_allclose(out.grad[i], single.grad[0])
        np.testing.assert_allclose(out.hess[i], single.hess[0])


def test_constants_and_reflected_ops():
    (x,) = seed_variables(np.array([[2.0]]))
    expr = 1.0 - x + 3.0 / x + x * np.array([2.0]) + (-x) ** 2
    # f(x) = 1 - x + 3/x + 2x + x^2 ; f'(x) = 1 - 3/x^2 + 2x ; f''(x) = 6/x^3 + 2
    assert expr.val[0] == pytest.approx(1 - 2 + 1.5 + 4 + 4)
    assert expr.grad[0, 0] == pytest.approx(1 - 3 / 4 + 4)
    assert expr.hess[0, 0, 0] == pytest.approx(6 / 8 + 2)


def test_hessian_symmetry_exact():
    pt = np.array([[1.1, 0.4, 2.2]])
    x, y, z = seed_variables(pt)
    out = x * y * z + exp(x * z) / y + (x + y) ** 3
    np.testing.assert_array_equal(out.hess[0], out.hess[0].T)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_product_rule_property(a, b):
    (x, y) = seed_variables(np.array([[a, b]]))
    f = (x ** 2 + 1.0) * log(y)
    # d2f/dxdy = 2x / y exactly
    assert f.hess[0, 0, 1] == pytest.approx(2 * a / b, rel=1e-12)
    assert f.grad[0, 0] == pytest.approx(2 * a * np.log(b), rel=1e-12)


def test_seed_offsets_partition_directions():
    z = np.array([[1.0, 2.0]])
    p = np.array([[3.0]])
    zx, zy = seed_variables(z, n_dirs=3, offset=0)
    (pp,) = seed_variables(p, n_dirs=3, offset=2)
    out = zx * pp + zy ** 2
    np.testing.assert_allclose(out.grad[0], [3.0, 4.0, 1.0])
    assert out.hess[0, 0, 2] == pytest.approx(1.0)
    assert out.hess[0, 2, 0] == pytest.approx(1.0)
    assert out.hess[0, 1, 1] == pytest.approx(2.0)
