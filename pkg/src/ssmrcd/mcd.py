"""Minimum covariance determinant estimation with deterministic starts.

Used for the global target matrix and for the per-neighborhood starting
subsets. No random restarts anywhere: the whole layer is seed-free.

Start construction, recorded here so tests are reproducible. The data are
coordinatewise standardized by the median and 1.4826 * MAD (standard
deviation fallback when the MAD is zero). Six initial scatter candidates are
built on the standardized matrix Z:

1. correlation matrix of tanh(Z),
2. Spearman correlation (correlation of column ranks, average ranks on ties),
3. normal-scores correlation, using quantiles of (rank - 1/3)/(m + 1/3),
4. spatial-sign covariance: mean of outer products of the unit-normalized
   rows (rows with zero norm contribute a zero vector),
5. sample covariance of the ceil(m/2) rows with smallest Euclidean norm,
6. the raw orthogonalized Gnanadesikan-Kettenring scatter, with the same
   MAD-based scale.

Each candidate's starting subset holds the h rows with smallest Mahalanobis
distance under (center 0, candidate scatter); singular candidates are
skipped and duplicate subsets deduplicated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import ndtri

from ._backend import h_smallest, kernels
from .numerics import (
    NotPositiveDefiniteError,
    consistency_factor,
    log_det_pd,
    pd_inverse,
)

__all__ = ["McdResult", "deterministic_starts", "cstep_plain", "mcd_estimate"]

MAD_CONSISTENCY = 1.4826


@dataclass(frozen=True)
class McdResult:
    """Robust location/scatter from the best converged C-step chain.

    ``scatter`` carries the consistency factor; ``log_det`` is the
    log-determinant of that scaled scatter.
    """

    mean: np.ndarray
    scatter: np.ndarray
    subset: np.ndarray
    log_det: float


def _robust_scale(v: np.ndarray) -> float:
    """1.4826 * MAD, falling back to the standard deviation on zero MAD."""
    mad = np.median(np.abs(v - np.median(v)))
    if mad > 0.0:
        return MAD_CONSISTENCY * float(mad)
    return float(np.std(v))


def _standardize(X: np.ndarray) -> np.ndarray:
    Z = np.empty_like(X)
    for j in range(X.shape[1]):
        col = X[:, j]
        scale = _robust_scale(col)
        if scale == 0.0:
            raise ValueError(f"column {j} is constant; drop it before estimation")
        Z[:, j] = (col - np.median(col)) / scale
    return Z


def _ogk_scatter(Z: np.ndarray) -> np.ndarray:
    m, p = Z.shape
    d = np.array([_robust_scale(Z[:, j]) for j in range(p)])
    if np.any(d == 0.0):
        raise NotPositiveDefiniteError("constant column in OGK input")
    Y = Z / d
    U = np.eye(p)
    for j in range(p):
        U[j, j] = _robust_scale(Y[:, j]) ** 2
        for k in range(j + 1, p):
            splus = _robust_scale(Y[:, j] + Y[:, k])
            sminus = _robust_scale(Y[:, j] - Y[:, k])
            U[j, k] = U[k, j] = 0.25 * (splus**2 - sminus**2)
    _, E = np.linalg.eigh(U)
    V = Y @ E
    gamma = np.array([_robust_scale(V[:, j]) ** 2 for j in range(p)])
    A = d[:, None] * E
    return A @ np.diag(gamma) @ A.T


def _scatter_candidates(Z: np.ndarray):
    m, p = Z.shape
    with np.errstate(invalid="ignore", divide="ignore"):
        yield np.corrcoef(np.tanh(Z), rowvar=False)
        ranks = np.column_stack([stats.rankdata(Z[:, j]) for j in range(p)])
        yield np.corrcoef(ranks, rowvar=False)
        yield np.corrcoef(ndtri((ranks - 1.0 / 3.0) / (m + 1.0 / 3.0)), rowvar=False)
        norms = np.linalg.norm(Z, axis=1)
        K = np.divide(Z, norms[:, None], out=np.zeros_like(Z), where=norms[:, None] > 0)
        yield K.T @ K / m
        half = h_smallest(norms**2, int(np.ceil(m / 2)))
        _, cov_half = kernels.subset_mean_cov(np.ascontiguousarray(Z), half.astype(np.int64))
        yield cov_half
        yield _ogk_scatter(Z)


def deterministic_starts(X, h: int) -> list:
    """Up to six deterministic starting subsets of size h, deduplicated."""
    X = np.ascontiguousarray(X, dtype=float)
    m, p = X.shape
    if m < p + 2:
        raise ValueError(f"need at least p + 2 = {p + 2} rows, got {m}")
    if not m / 2 < h <= m:
        raise ValueError(f"subset size h must lie in (m/2, m], got h={h}, m={m}")
    if h == m:
        return [np.arange(m, dtype=np.int64)]
    Z = np.ascontiguousarray(_standardize(X))
    zero = np.zeros(p)
    subsets, seen = [], set()
    for cand in _scatter_candidates(Z):
        cand = np.atleast_2d(np.asarray(cand, dtype=float))  # corrcoef is 0-d at p=1
        if not np.isfinite(cand).all():
            continue
        try:
            inv = pd_inverse(cand)
        except NotPositiveDefiniteError:
            continue
        d = kernels.mahalanobis_sq(Z, zero, inv)
        subset = h_smallest(d, h)
        key = subset.tobytes()
        if key not in seen:
            seen.add(key)
            subsets.append(subset)
    return subsets


def cstep_plain(X, subset) -> np.ndarray:
    """One concentration step: the h rows closest to the subset's own estimates.

    Raises ``NotPositiveDefiniteError`` when the subset covariance is
    singular; callers needing regularization handle that themselves.
    """
    X = np.ascontiguousarray(X, dtype=float)
    subset = np.asarray(subset, dtype=np.int64)
    h = subset.shape[0]
    if h < X.shape[1] + 1:
        raise ValueError(f"subset size {h} below p + 1 = {X.shape[1] + 1}")
    mean, cov = kernels.subset_mean_cov(X, subset)
    d = kernels.mahalanobis_sq(X, mean, pd_inverse(cov))
    return h_smallest(d, h)


def _run_chain(X, subset, max_iter: int):
    """Iterate C-steps until the subset repeats; returns (subset, log_det, steps)."""
    current = np.asarray(subset, dtype=np.int64)
    for step in range(max_iter):
        nxt = cstep_plain(X, current)
        if np.array_equal(nxt, current):
            break
        current = nxt
    _, cov = kernels.subset_mean_cov(X, current)
    return current, log_det_pd(cov), step + 1


def mcd_estimate(X, alpha: float, max_iter: int = 100) -> McdResult:
    """Best converged C-step chain over the deterministic starts.

    The returned scatter is the subset covariance times the consistency
    factor for trimming fraction alpha.
    """
    X = np.ascontiguousarray(X, dtype=float)
    n, p = X.shape
    if n <= 2 * p:
        raise ValueError(f"need n > 2p observations, got n={n}, p={p}")
    h = int(np.ceil(alpha * n))
    c = consistency_factor(alpha, p)  # validates alpha
    best = None
    for start in deterministic_starts(X, h):
        try:
            subset, ld, _ = _run_chain(X, start, max_iter)
        except NotPositiveDefiniteError:
            continue
        if best is None or ld < best[1]:
            best = (subset, ld)
    if best is None:
        raise ValueError(
            "all starting subsets produced singular covariances; "
            "use a diagonal robust-scale target instead"
        )
    subset, _ = best
    mean, cov = kernels.subset_mean_cov(X, subset)
    scatter = c * cov
    return McdResult(mean=mean, scatter=scatter, subset=subset, log_det=log_det_pd(scatter))
