"""Numpy implementations of the numerical kernels.

These are the reference versions; ``ellada._kernels`` (Cython) provides the
same functions with identical signatures and is preferred when it imports.
"""

import numpy as np

IMPLEMENTATION = "python"


def smooth_sqrt(h, eps):
    """Square root with a C2 quadratic extension below ``eps``.

    Returns ``(s, ds, d2s)``, the value and first two derivatives.
    """
    h = np.asarray(h, dtype=float)
    hi = np.maximum(h, eps)
    root = np.sqrt(hi)
    s = root.copy()
    ds = 0.5 / root
    d2s = -0.25 / (hi * root)
    low = h < eps
    if np.any(low):
        se = np.sqrt(eps)
        e32 = eps * se
        dh = h[low] - eps
        s[low] = se + dh / (2.0 * se) - dh * dh / (8.0 * e32)
        ds[low] = 1.0 / (2.0 * se) - dh / (4.0 * e32)
        d2s[low] = -1.0 / (4.0 * e32)
    return s, ds, d2s


def euler_residual(X, V, C, G, dt, x0, eps):
    """Implicit-Euler defects of ``dx/dt = C sqrt(x) + G v``.

    ``X`` is (N+1, nx) with the first ``nd = C.shape[0]`` columns carrying
    dynamics; the remaining columns are exogenous signals. The first ``nd``
    entries pin the initial state to ``x0``.
    """
    nd = C.shape[0]
    s, _, _ = smooth_sqrt(X[1:], eps)
    rhs = s @ C.T + V @ G.T
    dyn = X[1:, :nd] - X[:-1, :nd] - dt * rhs
    return np.concatenate([X[0, :nd] - x0, dyn.ravel()])


def euler_jacobian(X, V, C, G, dt, eps):
    """Dense Jacobian of :func:`euler_residual` w.r.t. ``[X.ravel(), V.ravel()]``."""
    n_steps = V.shape[0]
    nx = X.shape[1]
    nu = V.shape[1]
    nd = C.shape[0]
    n = (n_steps + 1) * nx + n_steps * nu
    m = nd * (n_steps + 1)
    J = np.zeros((m, n))
    idx = np.arange(nd)
    J[idx, idx] = 1.0

    _, ds, _ = smooth_sqrt(X[1:], eps)
    t = np.arange(n_steps)
    rows = nd + t[:, None] * nd + idx[None, :]  # (N, nd)
    # -x(t) and +x(t+1) on own states
    J[rows, t[:, None] * nx + idx[None, :]] = -1.0
    J[rows, (t[:, None] + 1) * nx + idx[None, :]] = 1.0
    # -dt * C[i, j] * ds(x_j(t+1))
    cols_x = (t[:, None] + 1) * nx + np.arange(nx)[None, :]  # (N, nx)
    block = -dt * C[None, :, :] * ds[:, None, :]  # (N, nd, nx)
    np.add.at(J, (rows[:, :, None], cols_x[:, None, :]), block)
    # -dt * G on inputs
    v0 = (n_steps + 1) * nx
    cols_v = v0 + t[:, None] * nu + np.arange(nu)[None, :]
    J[rows[:, :, None], cols_v[:, None, :]] = -dt * G[None, :, :]
    return J


def euler_hessian_diag(X, V, C, mult, dt, eps):
    """Diagonal of ``sum_c mult_c * hess(residual_c)``.

    The defects are separable in the state entries, so the weighted Hessian
    is diagonal; input entries contribute zero.
    """
    n_steps = V.shape[0]
    nx = X.shape[1]
    nd = C.shape[0]
    _, _, d2s = smooth_sqrt(X[1:], eps)
    w = mult[nd:].reshape(n_steps, nd)
    diag_x = np.zeros_like(X)
    diag_x[1:] = -dt * (w @ C) * d2s
    return np.concatenate([diag_x.ravel(), np.zeros(V.size)])


def sherman_morrison_update(Hinv, dw, dh, dw_hat):
    """In-place rank-one inverse update so that the result maps ``dh`` to ``dw``.

    ``Hinv += (dw - Hinv dh) (dw_hat^T Hinv) / (dw_hat^T Hinv dh)``.
    Returns the denominator.
    """
    u = Hinv @ dh
    row = dw_hat @ Hinv
    denom = float(row @ dh)
    Hinv += np.outer((dw - u) / denom, row)
    return denom


def gram_schmidt(basis, v):
    """Orthogonalize ``v`` against the rows of ``basis`` (assumed orthogonal)."""
    out = np.array(v, dtype=float, copy=True)
    for q in basis:
        out -= (q @ v) / (q @ q) * q
    return out
