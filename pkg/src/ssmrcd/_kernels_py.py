"""Numpy fallback for the compiled kernels in ``_kernels_cy``.

Same call signatures and semantics; used when the extension is not built or
when ``SSMRCD_BACKEND=python`` forces it.
"""

from __future__ import annotations

import numpy as np


def mahalanobis_sq(X, center, inv_cov):
    """Squared Mahalanobis distance of every row of X from center under inv_cov."""
    d = X - center
    return np.einsum("ij,jk,ik->i", d, inv_cov, d)


def subset_mean_cov(X, idx):
    """Mean vector and unbiased covariance of the rows X[idx]; requires len(idx) >= 2."""
    if len(idx) < 2:
        raise ValueError("subset must contain at least 2 rows")
    S = X[idx]
    mean = S.mean(axis=0)
    d = S - mean
    cov = d.T @ d / (len(idx) - 1)
    return mean, cov


def min_maha_sq(Y, x, inv_cov):
    """(min, argmin-position) of squared Mahalanobis distances from x to rows of Y.

    Ties keep the earliest position, so callers control tie-breaking through
    row order.
    """
    if Y.shape[0] == 0:
        raise ValueError("candidate set is empty")
    d = mahalanobis_sq(Y, x, inv_cov)
    i = int(np.argmin(d))
    return float(d[i]), i
