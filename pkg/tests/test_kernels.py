import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ellada import _kernels_py as py
from ellada import kernels

cy = pytest.importorskip("ellada._kernels")

levels = arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e-5, 50.0))


@settings(max_examples=60, deadline=None)
@given(levels, st.sampled_from([1e-6, 1e-4, 1e-2]))
def test_smooth_sqrt_parity(h, eps):
    for a, b in zip(py.smooth_sqrt(h, eps), cy.smooth_sqrt(h, eps)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)


def _traj(seed, N=6, nd=2, nc=1, nu=1):
    rng = np.random.default_rng(seed)
    X = np.abs(rng.standard_normal((N + 1, nd + nc))) * 5
    X[0, 0] = 5e-7  # exercise the smoothed branch
    V = 3 + rng.random((N, nu))
    C = rng.standard_normal((nd, nd + nc)) * 0.1
    G = rng.random((nd, nu)) * 0.2
    return X, V, C, G, rng.standard_normal(nd * (N + 1))


@pytest.mark.parametrize("seed", range(8))
def test_euler_kernels_parity(seed):
    X, V, C, G, mult = _traj(seed)
    x0 = X[0, :2] + 0.1
    np.testing.assert_allclose(py.euler_residual(X, V, C, G, 10.0, x0, 1e-6),
                               cy.euler_residual(X, V, C, G, 10.0, x0, 1e-6), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(py.euler_jacobian(X, V, C, G, 10.0, 1e-6),
                               cy.euler_jacobian(X, V, C, G, 10.0, 1e-6), rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(py.euler_hessian_diag(X, V, C, mult, 10.0, 1e-6),
                               cy.euler_hessian_diag(X, V, C, mult, 10.0, 1e-6), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("n", [1, 5, 40])
def test_sherman_morrison_parity(n):
    rng = np.random.default_rng(n)
    H = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    a, b, c = rng.standard_normal((3, n))
    H1, H2 = H.copy(), H.copy()
    d1 = py.sherman_morrison_update(H1, a, b, c)
    d2 = cy.sherman_morrison_update(H2, a, b, c)
    assert d1 == pytest.approx(d2, rel=1e-12)
    np.testing.assert_allclose(H1, H2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(H1 @ b, a, atol=1e-10)  # secant condition


def test_sherman_morrison_needs_contiguous():
    H = np.asfortranarray(np.eye(3) + 0.1)
    with pytest.raises(ValueError):
        cy.sherman_morrison_update(H, np.ones(3), np.ones(3), np.ones(3))


@pytest.mark.parametrize("k", [0, 1, 4])
def test_gram_schmidt_parity(k):
    rng = np.random.default_rng(k)
    basis = list(np.linalg.qr(rng.standard_normal((7, max(k, 1))))[0].T[:k])
    v = rng.standard_normal(7)
    a, b = py.gram_schmidt(basis, v), cy.gram_schmidt(basis, v)
    np.testing.assert_allclose(a, b, atol=1e-14)
    for q in basis:
        assert abs(q @ a) < 1e-12


def test_pure_python_switch():
    code = "from ellada import kernels; print(kernels.IMPLEMENTATION)"
    env = dict(os.environ, ELLADA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.IMPLEMENTATION == "cython"
