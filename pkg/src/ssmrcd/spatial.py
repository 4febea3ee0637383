"""Spatial structure: datasets, grid neighborhood partitions, weights, kNN.

Observation and neighborhood indices are 0-based throughout the Python API.
Coordinates are treated as planar Euclidean (no great-circle correction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Dataset",
    "NeighborhoodStructure",
    "grid_neighborhoods",
    "inverse_distance_weights",
    "adjacency_weights",
    "validate_weight_matrix",
    "spatial_knn",
]


@dataclass(frozen=True)
class Dataset:
    """n observations: unique string ids, 2-D coordinates, p attribute columns."""

    ids: tuple
    coords: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        coords = np.asarray(self.coords, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("attribute matrix must be 2-D")
        n = X.shape[0]
        if coords.shape != (n, 2):
            raise ValueError(f"coords must have shape ({n}, 2), got {coords.shape}")
        if len(ids) != n:
            raise ValueError(f"expected {n} ids, got {len(ids)}")
        if len(set(ids)) != n:
            raise ValueError("observation ids must be unique")
        if not np.isfinite(coords).all() or not np.isfinite(X).all():
            raise ValueError("coordinates and attributes must be finite")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NeighborhoodStructure:
    """Partition of observation indices into N neighborhoods.

    ``cells`` keeps, per neighborhood, the (col, row) grid cells it is built
    from (used for border adjacency after merging); None for non-grid
    structures, e.g. after deserialization.
    """

    assignment: np.ndarray
    members: tuple
    centers: np.ndarray
    grid_shape: tuple | None = None
    cells: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        centers = np.asarray(self.centers, dtype=float)
        members = tuple(np.asarray(m, dtype=np.int64) for m in self.members)
        n = assignment.shape[0]
        seen = np.concatenate(members) if members else np.empty(0, dtype=np.int64)
        if len(np.unique(seen)) != n or len(seen) != n:
            raise ValueError("neighborhood members must partition the observation indices")
        for i, m in enumerate(members):
            if not np.all(assignment[m] == i):
                raise ValueError("assignment and member lists disagree")
        if not np.isfinite(centers).all():
            raise ValueError("neighborhood centers must be finite")
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "centers", centers)

    @property
    def n_neighborhoods(self) -> int:
        return len(self.members)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.int64)


def _cell_assignment(values, borders):
    """Cell index per value: interval (b_{l-1}, b_l], lowest edge included.

    Points exactly on an interior border go to the lower-index cell.
    """
    idx = np.searchsorted(borders, values, side="left")
    return np.maximum(idx, 1) - 1


def grid_neighborhoods(coords, gx: int, gy: int, min_size: int = 2,
                       bounds=None) -> NeighborhoodStructure:
    """Partition the bounding box into a gx-by-gy grid of neighborhoods.

    Cells with fewer than ``min_size`` members are merged into the nearest
    nonempty cell (center-to-center), empty cells are dropped, and final
    centers are the member-coordinate means. ``bounds`` optionally fixes the
    box as (xmin, xmax, ymin, ymax) instead of the data bounding box.
    """
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if gx < 1 or gy < 1:
        raise ValueError("grid dimensions must be positive")
    if min_size < 1:
        raise ValueError("min_size must be positive")
    if n < min_size:
        raise ValueError(f"cannot form neighborhoods of size >= {min_size} from {n} points")
    if bounds is None:
        xmin, xmax = coords[:, 0].min(), coords[:, 0].max()
        ymin, ymax = coords[:, 1].min(), coords[:, 1].max()
    else:
        xmin, xmax, ymin, ymax = map(float, bounds)
    if xmax <= xmin and ymax <= ymin:
        raise ValueError("degenerate bounding box: all coordinates coincide")

    bx = np.linspace(xmin, xmax, gx + 1)
    by = np.linspace(ymin, ymax, gy + 1)
    ix = _cell_assignment(coords[:, 0], bx)
    iy = _cell_assignment(coords[:, 1], by)
    cell_of = ix * gy + iy

    cell_members = {}
    for c in range(gx * gy):
        m = np.nonzero(cell_of == c)[0]
        if len(m):
            cell_members[c] = list(m)
    # geometric cell centers drive the merge-target choice
    geo_center = {
        c: ((bx[c // gy] + bx[c // gy + 1]) / 2.0, (by[c % gy] + by[c % gy + 1]) / 2.0)
        for c in cell_members
    }
    cell_groups = {c: [c] for c in cell_members}

    while True:
        small = [c for c in sorted(cell_members) if len(cell_members[c]) < min_size]
        if not small:
            break
        c = small[0]
        others = [d for d in cell_members if d != c]
        if not others:
            raise ValueError(f"cannot reach min_size={min_size}: only {len(cell_members[c])} points remain")
        sc = np.array(geo_center[c])
        dist = [np.hypot(*(np.array(geo_center[d]) - sc)) for d in others]
        target = others[int(np.argmin(dist))]
        cell_members[target].extend(cell_members.pop(c))
        cell_groups[target].extend(cell_groups.pop(c))

    order = sorted(cell_members)
    members, centers, cells = [], [], []
    assignment = np.empty(n, dtype=np.int64)
    for i, c in enumerate(order):
        m = np.sort(np.array(cell_members[c], dtype=np.int64))
        members.append(m)
        assignment[m] = i
        centers.append(coords[m].mean(axis=0))
        cells.append(tuple((d // gy, d % gy) for d in sorted(cell_groups[c])))
    return NeighborhoodStructure(
        assignment=assignment,
        members=tuple(members),
        centers=np.array(centers),
        grid_shape=(gx, gy),
        cells=tuple(cells),
    )


def validate_weight_matrix(W) -> np.ndarray:
    """Check the influence-weight invariants: nonnegative, zero diagonal, rows sum to 1.

    The degenerate 1x1 zero matrix is accepted (a single neighborhood has no
    peers to distribute weight over).
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("weight matrix must be square")
    if np.any(W < 0):
        raise ValueError("weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise ValueError("weight matrix diagonal must be zero")
    if W.shape[0] == 1:
        return W
    if np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("every weight row must sum to 1")
    return W


def inverse_distance_weights(centers) -> np.ndarray:
    """Row-normalized inverse-distance weights between neighborhood centers."""
    centers = np.asarray(centers, dtype=float)
    N = centers.shape[0]
    if N < 2:
        raise ValueError("need at least 2 neighborhoods for inverse-distance weights")
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    off = ~np.eye(N, dtype=bool)
    if np.any(dist[off] == 0.0):
        raise ValueError("coincident neighborhood centers")
    W = np.zeros((N, N))
    W[off] = 1.0 / dist[off]
    W /= W.sum(axis=1, keepdims=True)
    return validate_weight_matrix(W)


def adjacency_weights(structure: NeighborhoodStructure) -> np.ndarray:
    """Border-adjacency weights: 1/degree for 4-connected grid neighbors.

    Merged neighborhoods inherit the union of their cells' borders.
    """
    if structure.cells is None or structure.grid_shape is None:
        raise ValueError("adjacency weights need a grid-based structure")
    N = structure.n_neighborhoods
    if N < 2:
        raise ValueError("need at least 2 neighborhoods for adjacency weights")
    cell_sets = [set(c) for c in structure.cells]
    W = np.zeros((N, N))
    for i in range(N):
        for j in range(i + 1, N):
            touching = any(
                (abs(a - c) == 1 and b == d) or (a == c and abs(b - d) == 1)
                for (a, b) in cell_sets[i]
                for (c, d) in cell_sets[j]
            )
            if touching:
                W[i, j] = W[j, i] = 1.0
    deg = W.sum(axis=1)
    if np.any(deg == 0):
        bad = int(np.nonzero(deg == 0)[0][0])
        raise ValueError(f"neighborhood {bad} shares no border with any other")
    W /= deg[:, None]
    return validate_weight_matrix(W)


def spatial_knn(coords, k: int) -> np.ndarray:
    """For each point, the k nearest other points by Euclidean coordinate distance.

    Exact ties are broken by ascending observation index; the query point is
    excluded. Returns an (n, k) integer array.
    """
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    diff = coords[:, None, :] - coords[None, :, :]
    d2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps ascending index on exact distance ties
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)
