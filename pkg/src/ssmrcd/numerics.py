"""Scalar statistical primitives shared across the package.

Chi-square distribution helpers, the trimming consistency factor, the
medcouple and the skewness-adjusted boxplot fence, sample covariance, and
eigen/Cholesky based matrix diagnostics.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg, special

__all__ = [
    "NotPositiveDefiniteError",
    "chi2_cdf",
    "chi2_quantile",
    "consistency_factor",
    "medcouple",
    "adjusted_upper_fence",
    "sample_covariance",
    "condition_number",
    "log_det_pd",
    "pd_inverse",
]

# Relative eigenvalue / Cholesky-pivot floor below which a matrix is treated
# as numerically singular rather than silently regularized.
SINGULARITY_RTOL = 1e-12


class NotPositiveDefiniteError(ValueError):
    """A matrix required to be positive definite failed its Cholesky check."""


def _check_df(df) -> int:
    if int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {df}")
    return int(df)


def chi2_cdf(x: float, df: int) -> float:
    """CDF of the chi-square distribution with ``df`` degrees of freedom."""
    df = _check_df(df)
    if x < 0:
        raise ValueError(f"chi-square CDF argument must be >= 0, got {x}")
    return float(special.chdtr(df, x))


def chi2_quantile(prob: float, df: int) -> float:
    """Quantile (inverse CDF) of the chi-square distribution."""
    df = _check_df(df)
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie strictly in (0, 1), got {prob}")
    # chdtri inverts the *complemented* CDF
    return float(special.chdtri(df, 1.0 - prob))


def consistency_factor(alpha: float, p: int) -> float:
    """Gaussian consistency factor for covariance from the best alpha-fraction.

    c_alpha = alpha / F_{chi2, p+2}(q) with q the alpha-quantile of chi2_p.
    Equals 1 exactly at alpha = 1 (no trimming) and grows as alpha shrinks.
    """
    p = _check_df(p)
    if not 0.5 <= alpha <= 1.0:
        raise ValueError(f"subset fraction alpha must lie in [0.5, 1], got {alpha}")
    if alpha == 1.0:
        return 1.0
    q = chi2_quantile(alpha, p)
    return alpha / chi2_cdf(q, p + 2)


def medcouple(values) -> float:
    """Robust skewness measure in [-1, 1] via the exhaustive O(n^2) kernel.

    Kernel h(u, v) = ((u - m) - (m - v)) / (u - v) over pairs u >= m >= v,
    with the signed-index kernel on pairs tied at the median m. Follows the
    adjusted-boxplot construction of Hubert & Vandervieren (2008).
    """
    y = np.sort(np.asarray(values, dtype=float))
    n = y.shape[0]
    if n < 3:
        raise ValueError(f"medcouple needs at least 3 values, got {n}")
    m = np.median(y)
    z = y - m
    lower = z[z <= 0.0]
    upper = z[z >= 0.0][:, None]
    denom = upper - lower
    both_zero = (lower == 0.0) & (upper == 0.0)
    denom[both_zero] = np.inf
    h = (upper + lower) / denom
    # Pairs tied at the median: -1 above the anti-diagonal, 0 on it, +1 below,
    # which keeps the statistic antisymmetric under negation-and-reversal.
    num_ties = int(np.sum(lower == 0.0))
    if num_ties:
        block = np.ones((num_ties, num_ties)) - np.eye(num_ties)
        block -= 2 * np.triu(block)
        h[:num_ties, -num_ties:] = np.fliplr(block)
    return float(np.median(h))


def adjusted_upper_fence(values) -> float:
    """Upper fence of the medcouple-adjusted boxplot.

    Q3 + 1.5 * exp(3 MC) * IQR for MC >= 0, exponent 4 MC for MC < 0, with
    linear-interpolation (type-7) quartiles.
    """
    y = np.asarray(values, dtype=float)
    if y.shape[0] < 4:
        raise ValueError(f"adjusted fence needs at least 4 values, got {y.shape[0]}")
    q1, q3 = np.percentile(y, [25.0, 75.0])
    iqr = q3 - q1
    mc = medcouple(y)
    expo = 3.0 * mc if mc >= 0 else 4.0 * mc
    return float(q3 + 1.5 * math.exp(expo) * iqr)


def sample_covariance(X):
    """Unbiased sample covariance (divisor h-1) and mean of the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-D data matrix")
    if X.shape[0] < 2:
        raise ValueError(f"covariance needs at least 2 rows, got {X.shape[0]}")
    mean = X.mean(axis=0)
    d = X - mean
    return d.T @ d / (X.shape[0] - 1), mean


def _check_symmetric(S, rtol=1e-8):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return S


def condition_number(S) -> float:
    """Spectral condition number of a symmetric PSD matrix.

    Returns ``inf`` when the smallest eigenvalue is below the singularity
    floor relative to the largest.
    """
    S = _check_symmetric(S)
    eig = np.linalg.eigvalsh(S)
    lo, hi = float(eig[0]), float(eig[-1])
    if hi <= 0.0:
        raise ValueError("matrix has no positive eigenvalue")
    if lo <= SINGULARITY_RTOL * hi:
        return math.inf
    return hi / lo


def _cholesky_pd(S) -> np.ndarray:
    S = _check_symmetric(S)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("Cholesky factorization failed") from exc
    pivot_floor = SINGULARITY_RTOL * np.trace(S) / S.shape[0]
    if np.min(np.diag(L) ** 2) < pivot_floor:
        raise NotPositiveDefiniteError("Cholesky pivot below singularity floor")
    return L


def log_det_pd(S) -> float:
    """Log-determinant of a symmetric positive definite matrix via Cholesky."""
    return float(2.0 * np.sum(np.log(np.diag(_cholesky_pd(S)))))


def pd_inverse(S) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky.

    The result is exactly symmetric so downstream quadratic forms stay
    symmetric in their arguments.
    """
    L = _cholesky_pd(S)
    Linv = linalg.solve_triangular(L, np.eye(S.shape[0]), lower=True)
    inv = Linv.T @ Linv
    return (inv + inv.T) / 2.0
