# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: Mahalanobis quadratic forms, subset moments, min scan.

Semantics must match ``_kernels_py`` exactly (up to floating-point summation
order); the backend is chosen at import time in ``_backend``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def mahalanobis_sq(double[:, ::1] X, double[::1] center, double[:, ::1] inv_cov):
    """Squared Mahalanobis distance of every row of X from center under inv_cov."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double[::1] d = np.empty(p, dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc, row

    for i in range(n):
        for j in range(p):
            d[j] = X[i, j] - center[j]
        acc = 0.0
        for j in range(p):
            row = 0.0
            for k in range(p):
                row += inv_cov[j, k] * d[k]
            acc += d[j] * row
        o[i] = acc
    return out


def subset_mean_cov(double[:, ::1] X, long long[::1] idx):
    """Mean vector and unbiased covariance of the rows X[idx]; requires len(idx) >= 2."""
    cdef Py_ssize_t h = idx.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mean = np.zeros(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cov = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] m = mean
    cdef double[:, ::1] c = cov
    cdef double[::1] d = np.empty(p, dtype=np.float64)
    cdef Py_ssize_t t, j, k, r

    if h < 2:
        raise ValueError("subset must contain at least 2 rows")
    for t in range(h):
        r = idx[t]
        for j in range(p):
            m[j] += X[r, j]
    for j in range(p):
        m[j] /= h
    for t in range(h):
        r = idx[t]
        for j in range(p):
            d[j] = X[r, j] - m[j]
        for j in range(p):
            for k in range(j, p):
                c[j, k] += d[j] * d[k]
    for j in range(p):
        for k in range(j, p):
            c[j, k] /= h - 1
            c[k, j] = c[j, k]
    return mean, cov


def min_maha_sq(double[:, ::1] Y, double[::1] x, double[:, ::1] inv_cov):
    """(min, argmin-position) of squared Mahalanobis distances from x to rows of Y.

    Ties keep the earliest position, so callers control tie-breaking through
    row order.
    """
    cdef Py_ssize_t n = Y.shape[0]
    cdef Py_ssize_t p = Y.shape[1]
    cdef double[::1] d = np.empty(p, dtype=np.float64)
    cdef Py_ssize_t i, j, k, best_i
    cdef double acc, row, best

    if n == 0:
        raise ValueError("candidate set is empty")
    best = np.inf
    best_i = 0
    for i in range(n):
        for j in range(p):
            d[j] = x[j] - Y[i, j]
        acc = 0.0
        for j in range(p):
            row = 0.0
            for k in range(p):
                row += inv_cov[j, k] * d[k]
            acc += d[j] * row
        if acc < best:
            best = acc
            best_i = i
    return best, best_i
