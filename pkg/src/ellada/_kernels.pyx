# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``; same signatures."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
cimport scipy.linalg.cython_blas as blas

cnp.import_array()

IMPLEMENTATION = "cython"


cdef inline void _ssqrt(double h, double eps, double* s, double* ds, double* d2s) nogil:
    cdef double r, se, e32, dh
    if h >= eps:
        r = sqrt(h)
        s[0] = r
        ds[0] = 0.5 / r
        d2s[0] = -0.25 / (h * r)
    else:
        se = sqrt(eps)
        e32 = eps * se
        dh = h - eps
        s[0] = se + dh / (2.0 * se) - dh * dh / (8.0 * e32)
        ds[0] = 1.0 / (2.0 * se) - dh / (4.0 * e32)
        d2s[0] = -1.0 / (4.0 * e32)


def smooth_sqrt(h, double eps):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(h, dtype=float).ravel()
    cdef Py_ssize_t n = flat.shape[0], k
    cdef cnp.ndarray[double, ndim=1] s = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] ds = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] d2s = np.empty(n)
    for k in range(n):
        _ssqrt(flat[k], eps, &s[k], &ds[k], &d2s[k])
    shape = np.shape(h)
    return s.reshape(shape), ds.reshape(shape), d2s.reshape(shape)


def euler_residual(X, V, C, G, double dt, x0, double eps):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=float)
    cdef double[:, ::1] Vv = np.ascontiguousarray(V, dtype=float)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=float)
    cdef double[:, ::1] Gv = np.ascontiguousarray(G, dtype=float)
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=float)
    cdef Py_ssize_t n_steps = Vv.shape[0], nx = Xv.shape[1], nu = Vv.shape[1]
    cdef Py_ssize_t nd = Cv.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.empty(nd * (n_steps + 1))
    cdef double[::1] r = out
    cdef double[::1] sv = np.empty(nx)
    cdef double s, ds, d2s, acc
    cdef Py_ssize_t t, i, j, l
    for i in range(nd):
        r[i] = Xv[0, i] - x0v[i]
    for t in range(n_steps):
        for j in range(nx):
            _ssqrt(Xv[t + 1, j], eps, &s, &ds, &d2s)
            sv[j] = s
        for i in range(nd):
            acc = 0.0
            for j in range(nx):
                acc += sv[j] * Cv[i, j]
            for l in range(nu):
                acc += Vv[t, l] * Gv[i, l]
            r[nd + t * nd + i] = Xv[t + 1, i] - Xv[t, i] - dt * acc
    return out


def euler_jacobian(X, V, C, G, double dt, double eps):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=float)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=float)
    cdef double[:, ::1] Gv = np.ascontiguousarray(G, dtype=float)
    cdef Py_ssize_t n_steps = V.shape[0], nx = Xv.shape[1], nu = V.shape[1]
    cdef Py_ssize_t nd = Cv.shape[0]
    cdef Py_ssize_t n = (n_steps + 1) * nx + n_steps * nu
    cdef Py_ssize_t m = nd * (n_steps + 1)
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((m, n))
    cdef double[:, ::1] J = out
    cdef double[::1] dsv = np.empty(nx)
    cdef double s, ds, d2s
    cdef Py_ssize_t t, i, j, l, row, v0 = (n_steps + 1) * nx
    for i in range(nd):
        J[i, i] = 1.0
    for t in range(n_steps):
        for j in range(nx):
            _ssqrt(Xv[t + 1, j], eps, &s, &ds, &d2s)
            dsv[j] = ds
        for i in range(nd):
            row = nd + t * nd + i
            J[row, t * nx + i] = -1.0
            J[row, (t + 1) * nx + i] = 1.0
            for j in range(nx):
                J[row, (t + 1) * nx + j] += -dt * Cv[i, j] * dsv[j]
            for l in range(nu):
                J[row, v0 + t * nu + l] = -dt * Gv[i, l]
    return out


def euler_hessian_diag(X, V, C, mult, double dt, double eps):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=float)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=float)
    cdef double[::1] w = np.ascontiguousarray(mult, dtype=float)
    cdef Py_ssize_t n_steps = V.shape[0], nx = Xv.shape[1], nu = V.shape[1]
    cdef Py_ssize_t nd = Cv.shape[0]
    cdef cnp.ndarray[double, ndim=1] out = np.zeros((n_steps + 1) * nx + n_steps * nu)
    cdef double[::1] d = out
    cdef double s, ds, d2s, acc
    cdef Py_ssize_t t, i, j
    for t in range(n_steps):
        for j in range(nx):
            _ssqrt(Xv[t + 1, j], eps, &s, &ds, &d2s)
            acc = 0.0
            for i in range(nd):
                acc += w[nd + t * nd + i] * Cv[i, j]
            d[(t + 1) * nx + j] = -dt * acc * d2s
    return out


def sherman_morrison_update(cnp.ndarray[double, ndim=2] Hinv, dw, dh, dw_hat):
    # BLAS on the row-major buffer seen as column-major H^T
    if not Hinv.flags.c_contiguous:
        raise ValueError("Hinv must be C-contiguous")
    cdef double[:, ::1] H = Hinv
    cdef double[::1] a = np.ascontiguousarray(dw, dtype=float)
    cdef double[::1] b = np.ascontiguousarray(dh, dtype=float)
    cdef double[::1] c = np.ascontiguousarray(dw_hat, dtype=float)
    cdef int n = <int>H.shape[0], one = 1, i
    cdef double[::1] u = np.empty(n)
    cdef double[::1] row = np.empty(n)
    cdef double alpha = 1.0, beta = 0.0, denom = 0.0
    cdef char *tr = b"T"
    cdef char *nt = b"N"
    if n == 0:
        return 0.0
    # u = H b  (H^T in column-major, so transpose)
    blas.dgemv(tr, &n, &n, &alpha, &H[0, 0], &n, &b[0], &one, &beta, &u[0], &one)
    # row = c^T H = H^T c  (no transpose in column-major view)
    blas.dgemv(nt, &n, &n, &alpha, &H[0, 0], &n, &c[0], &one, &beta, &row[0], &one)
    denom = blas.ddot(&n, &row[0], &one, &b[0], &one)
    for i in range(n):
        u[i] = (a[i] - u[i]) / denom
    # H += u row^T  ==  H^T += row u^T in column-major
    blas.dger(&n, &n, &alpha, &row[0], &one, &u[0], &one, &H[0, 0], &n)
    return denom


def gram_schmidt(basis, v):
    cdef double[::1] src = np.ascontiguousarray(v, dtype=float)
    cdef Py_ssize_t n = src.shape[0], i
    cdef cnp.ndarray[double, ndim=1] out = np.array(src, dtype=float, copy=True)
    cdef double[::1] o = out
    cdef double[::1] q
    cdef double num, den
    for qa in basis:
        q = np.ascontiguousarray(qa, dtype=float)
        num = 0.0
        den = 0.0
        for i in range(n):
            num += q[i] * src[i]
            den += q[i] * q[i]
        for i in range(n):
            o[i] -= num / den * q[i]
    return out
