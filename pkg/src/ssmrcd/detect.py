"""Local outlier detection on top of a fitted coupled-covariance model.

Each observation gets a "next distance": the smallest Mahalanobis distance
to any of its k spatially nearest neighbors, measured with the smoothed
covariance of the observation's own neighborhood.  Neighbors are free to
come from other neighborhoods.  The cutoff is the upper fence of the
skewness-adjusted boxplot over all next distances, and an observation is
flagged when its next distance lies strictly above the fence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .estimator import SsMrcdModel
from .numerics import adjusted_upper_fence
from .spatial import Dataset, spatial_knn

__all__ = ["OutlierReport", "next_distance", "detect_outliers"]


@dataclass(frozen=True)
class OutlierReport:
    """Per-observation next distances plus the global cutoff and flags.

    ``ratio`` is next_distance / cutoff.  In the degenerate case of a zero
    cutoff the ratio is 0 where the distance is 0 and infinite otherwise,
    which keeps ``flags == (ratio > 1)`` intact.
    """

    ids: tuple
    next_distance: np.ndarray
    neighborhood: np.ndarray
    nearest_id: tuple
    cutoff: float
    flags: np.ndarray
    ratio: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if not (
            self.next_distance.shape
            == self.neighborhood.shape
            == self.flags.shape
            == self.ratio.shape
            == (n,)
        ) or len(self.nearest_id) != n:
            raise ValueError("report fields must have one entry per observation")
        if np.any(self.next_distance < 0) or np.any(np.isnan(self.ratio)):
            raise ValueError("distances must be nonnegative and ratios well defined")
        if not np.array_equal(self.flags, self.next_distance > self.cutoff):
            raise ValueError("flags must equal next_distance > cutoff")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())


def next_distance(i, X, neighbors, Sigma_inv):
    """Smallest Mahalanobis distance from row i of X to its listed neighbors.

    Returns ``(distance, j)`` with j the neighbor index achieving the
    minimum; ties go to the smallest index.  ``Sigma_inv`` is the inverse
    covariance of observation i's neighborhood.
    """
    nbrs = np.sort(np.asarray(neighbors, dtype=np.int64))
    if nbrs.size == 0:
        raise ValueError(f"observation {i} has an empty neighbor list")
    X = np.ascontiguousarray(X, dtype=float)
    d2, pos = kernels.min_maha_sq(X[nbrs], X[i], np.ascontiguousarray(Sigma_inv))
    return math.sqrt(max(d2, 0.0)), int(nbrs[pos])


def detect_outliers(dataset: Dataset, model: SsMrcdModel, k: int = 10) -> OutlierReport:
    """Flag local outliers in ``dataset`` under a fitted model.

    ``k`` sets the number of spatial nearest neighbors screened per
    observation.
    """
    n = dataset.n
    assignment = model.structure.assignment
    if len(assignment) != n:
        raise ValueError(
            f"model covers {len(assignment)} observations but the dataset has {n}"
        )
    if dataset.p != model.Sigma.shape[-1]:
        raise ValueError(
            f"attribute dimension mismatch: data has {dataset.p} columns, "
            f"model was fit on {model.Sigma.shape[-1]}"
        )
    if n < 4:
        raise ValueError("need at least 4 observations to place the cutoff")
    if not 1 <= k < n:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")

    knn = spatial_knn(dataset.coords, k)
    X = np.ascontiguousarray(dataset.X, dtype=float)
    dist = np.empty(n)
    nearest = np.empty(n, dtype=np.int64)
    for i in range(n):
        dist[i], nearest[i] = next_distance(
            i, X, knn[i], model.Sigma_inv[assignment[i]]
        )

    cutoff = adjusted_upper_fence(dist)
    flags = dist > cutoff
    if cutoff > 0:
        ratio = dist / cutoff
    else:
        ratio = np.where(dist > 0, np.inf, 0.0)

    return OutlierReport(
        ids=dataset.ids,
        next_distance=dist,
        neighborhood=np.asarray(assignment, dtype=np.int64).copy(),
        nearest_id=tuple(dataset.ids[j] for j in nearest),
        cutoff=float(cutoff),
        flags=flags,
        ratio=ratio,
    )
