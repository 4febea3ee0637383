"""Spatially smoothed robust covariance estimation over coupled neighborhoods.

The estimator minimizes, over one h_i-subset per neighborhood, the sum of
determinants of the smoothed matrices

    Sigma_i = (1 - lambda) K_i + lambda * sum_j w_ij K_j,

where K_i = rho_i I + (1 - rho_i) c_alpha Cov(Z_{H_i}) in the basis in which
the global robust target equals the identity. Optimization runs generalized
C-step sweeps from deterministic starting subsets; every quantity is
deterministic given the configuration seed.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._backend import h_smallest, kernels
from .mcd import _robust_scale, deterministic_starts, mcd_estimate
from .numerics import (
    NotPositiveDefiniteError,
    consistency_factor,
    log_det_pd,
    pd_inverse,
)
from .spatial import Dataset, NeighborhoodStructure, validate_weight_matrix

__all__ = [
    "SsMrcdConfig",
    "SsMrcdModel",
    "transform_to_target_basis",
    "select_rho",
    "k_matrix",
    "smoothed_covariance",
    "objective",
    "cstep_neighborhood",
    "ssmrcd_fit",
    "ssmrcd_exhaustive",
    "mahalanobis_pair",
]

# log-determinant above which exponentiating a single objective term overflows
LOG_DET_OVERFLOW = 700.0

# starts whose smallest feasible ridge is at most this are "well-behaved"
RHO_GOOD = 0.1

DEFAULT_RHO_GRID = tuple(round(0.01 * g, 2) for g in range(1, 100))


@dataclass(frozen=True, eq=False)
class SsMrcdConfig:
    """Configuration of the smoothed fit.

    ``lam`` is the smoothing degree in [0, 1); 1 is rejected because the
    C-step decrease guarantee needs a positive own-neighborhood weight.
    ``rho`` optionally fixes the per-neighborhood ridge weights, skipping the
    data-driven selection; meant for equivariance studies and tests, not
    production fits.
    """

    lam: float
    alpha: float
    weights: np.ndarray
    max_cond: float = 50.0
    rho_grid: tuple = DEFAULT_RHO_GRID
    max_starts: int | None = None
    max_iter: int = 100
    seed: int = 0
    rho: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"smoothing degree lam must lie in [0, 1), got {self.lam}")
        if not 0.5 <= self.alpha <= 1.0:
            raise ValueError(f"subset fraction alpha must lie in [0.5, 1], got {self.alpha}")
        W = validate_weight_matrix(self.weights)
        object.__setattr__(self, "weights", W)
        if not self.max_cond > 1.0:
            raise ValueError(f"max_cond must exceed 1, got {self.max_cond}")
        grid = tuple(float(g) for g in self.rho_grid)
        if not grid or any(not 0.0 < g < 1.0 for g in grid) or list(grid) != sorted(set(grid)):
            raise ValueError("rho_grid must be strictly ascending values inside (0, 1)")
        object.__setattr__(self, "rho_grid", grid)
        if self.max_starts is not None and self.max_starts < 1:
            raise ValueError("max_starts must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.rho is not None:
            rho = tuple(float(r) for r in self.rho)
            if len(rho) != W.shape[0]:
                raise ValueError(
                    f"fixed rho needs one value per neighborhood ({W.shape[0]}), got {len(rho)}"
                )
            if any(not 0.0 < r <= 1.0 for r in rho):
                raise ValueError("fixed rho values must lie in (0, 1]")
            object.__setattr__(self, "rho", rho)

    @property
    def n_neighborhoods(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class SsMrcdModel:
    """Fitted state: per-neighborhood subsets, ridge weights, matrices, and
    optimization diagnostics. All matrices are in the original data basis.

    ``traces`` holds one objective-per-sweep array per evaluated starting
    combination, rescaled to original-basis determinant units.
    ``cstep_log_dets`` is only populated by instrumented fits: rows of
    (log det before, log det after) for each single-neighborhood C-step with
    all other K matrices frozen.
    """

    config: SsMrcdConfig
    structure: NeighborhoodStructure
    target: np.ndarray
    eigen_vectors: np.ndarray
    eigen_values: np.ndarray
    subsets: tuple
    rho: np.ndarray
    means: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray
    Sigma_inv: np.ndarray
    objective: float
    traces: tuple
    best_start: int
    monotone_fraction: float
    converged: bool
    cstep_log_dets: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        cfg, st = self.config, self.structure
        N = st.n_neighborhoods
        W = cfg.weights
        if W.shape[0] != N:
            raise ValueError("weight matrix size does not match the neighborhood count")
        for i, (sub, mem) in enumerate(zip(self.subsets, st.members)):
            h = math.ceil(cfg.alpha * len(mem))
            if len(sub) != h:
                raise ValueError(f"neighborhood {i}: subset size {len(sub)} != h = {h}")
            if not np.isin(sub, mem).all():
                raise ValueError(f"neighborhood {i}: subset escapes its neighborhood")
        assembled = smoothed_all(self.K, W, cfg.lam)
        scale = max(1.0, float(np.max(np.abs(self.Sigma))))
        if np.max(np.abs(assembled - self.Sigma)) > 1e-10 * scale:
            raise ValueError("Sigma does not equal the smoothed combination of the K matrices")
        for i in range(N):
            log_det_pd(self.Sigma[i])  # raises if not PD

    @property
    def n_neighborhoods(self) -> int:
        return len(self.subsets)


def transform_to_target_basis(X, T):
    """Rotate/scale X so the target T becomes the identity.

    Returns (Z, Q, eigenvalues) with T = Q diag(eigenvalues) Q^T and
    Z = X Q diag(eigenvalues)^{-1/2}; the inverse map is x = Q diag^{1/2} z.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.max(np.abs(T - T.T)) > 1e-8 * max(1.0, float(np.max(np.abs(T)))):
        raise NotPositiveDefiniteError("target matrix is not symmetric")
    lam_vec, Q = np.linalg.eigh(T)
    if lam_vec[0] <= 1e-12 * lam_vec[-1] or lam_vec[-1] <= 0.0:
        raise NotPositiveDefiniteError("target matrix is not positive definite")
    Z = X @ Q / np.sqrt(lam_vec)
    return Z, Q, lam_vec


def k_matrix(Z_H, rho: float, alpha: float) -> np.ndarray:
    """Ridge-regularized scaled covariance rho I + (1 - rho) c_alpha Cov(Z_H)."""
    Z_H = np.asarray(Z_H, dtype=float)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if Z_H.shape[0] < 2:
        raise ValueError("subset must contain at least 2 rows")
    p = Z_H.shape[1]
    d = Z_H - Z_H.mean(axis=0)
    cov = d.T @ d / (Z_H.shape[0] - 1)
    return rho * np.eye(p) + (1.0 - rho) * consistency_factor(alpha, p) * cov


def _rho_per_start(Z_i, starts, alpha, max_cond, rho_grid):
    """Smallest grid rho per start making the ridge matrix's condition number
    acceptable; the largest grid value (with a warning) when none does."""
    Z_i = np.ascontiguousarray(Z_i, dtype=float)
    p = Z_i.shape[1]
    c = consistency_factor(alpha, p)
    grid = np.asarray(rho_grid, dtype=float)
    out = np.empty(len(starts))
    for s, start in enumerate(starts):
        _, cov = kernels.subset_mean_cov(Z_i, np.asarray(start, dtype=np.int64))
        eig = np.clip(np.linalg.eigvalsh(c * cov), 0.0, None)
        lo = grid + (1.0 - grid) * eig[0]
        hi = grid + (1.0 - grid) * eig[-1]
        feasible = np.nonzero(hi <= max_cond * lo)[0]
        if len(feasible):
            out[s] = grid[feasible[0]]
        else:
            warnings.warn(
                "rho grid exhausted without reaching the condition-number bound; "
                "using its largest value",
                RuntimeWarning,
                stacklevel=3,
            )
            out[s] = grid[-1]
    return out


def select_rho(Z_i, starts, alpha, max_cond, rho_grid):
    """Data-driven ridge weight for one neighborhood plus the retained starts.

    Starts whose smallest feasible rho is at most 0.1 are kept and rho is
    their maximum; otherwise rho is max(0.1, median over all starts) and
    every start at or below it is kept.
    """
    if not starts:
        raise ValueError("need at least one starting subset")
    rho_h = _rho_per_start(Z_i, starts, alpha, max_cond, rho_grid)
    good = rho_h <= RHO_GOOD
    if good.any():
        rho_i = float(rho_h[good].max())
        retained = [s for s, g in zip(starts, good) if g]
    else:
        rho_i = max(RHO_GOOD, float(np.median(rho_h)))
        retained = [s for s, r in zip(starts, rho_h) if r <= rho_i]
    return rho_i, retained


def smoothed_covariance(i: int, Ks, W, lam: float) -> np.ndarray:
    """(1 - lam) K_i + lam * sum_{j != i} w_ij K_j for neighborhood i."""
    S = (1.0 - lam) * Ks[i]
    if lam > 0.0:
        for j in range(len(Ks)):
            if W[i, j] > 0.0:
                S = S + lam * W[i, j] * Ks[j]
    return S


def smoothed_all(Ks, W, lam: float) -> np.ndarray:
    """All N smoothed matrices at once (stacked einsum form)."""
    Ks = np.asarray(Ks, dtype=float)
    return (1.0 - lam) * Ks + lam * np.einsum("ij,jkl->ikl", W, Ks)


def _objective_terms(Ks, W, lam, ld_offset=0.0):
    terms = np.empty(len(Ks))
    for i in range(len(Ks)):
        try:
            ld = log_det_pd(smoothed_covariance(i, Ks, W, lam)) + ld_offset
        except NotPositiveDefiniteError as exc:
            raise NotPositiveDefiniteError(
                f"smoothed covariance of neighborhood {i} is not positive definite"
            ) from exc
        if ld > LOG_DET_OVERFLOW:
            raise OverflowError(
                f"log-determinant {ld:.1f} of neighborhood {i} overflows the objective"
            )
        terms[i] = math.exp(ld)
    return terms


def objective(Ks, W, lam: float) -> float:
    """Sum over neighborhoods of det((1 - lam) K_i + lam sum_j w_ij K_j)."""
    return float(_objective_terms(Ks, W, lam).sum())


def cstep_neighborhood(i: int, Zs, h: int, Ks, means, W, lam: float) -> np.ndarray:
    """Generalized concentration step for neighborhood i.

    Under the current smoothed matrix and subset mean, picks the h members
    of neighborhood i (local indices into Zs[i]) with smallest squared
    Mahalanobis distance. All inputs reflect the previous sweep's state.
    """
    inv = pd_inverse(smoothed_covariance(i, Ks, W, lam))
    d = kernels.mahalanobis_sq(Zs[i], means[i], inv)
    return h_smallest(d, h)


def mahalanobis_pair(x, y, Sigma_inv) -> float:
    """Pairwise Mahalanobis distance [(x-y)^T Sigma^{-1} (x-y)]^{1/2}."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    Sigma_inv = np.asarray(Sigma_inv, dtype=float)
    if x.shape != y.shape or Sigma_inv.shape != (x.shape[0], x.shape[0]):
        raise ValueError("dimension mismatch between points and inverse covariance")
    d = x - y
    return math.sqrt(max(0.0, float(d @ Sigma_inv @ d)))


def _diagonal_fallback_target(X) -> np.ndarray:
    scales = np.array([_robust_scale(X[:, j]) for j in range(X.shape[1])])
    if np.any(scales == 0.0):
        raise ValueError("constant column: no usable robust-scale target")
    return np.diag(scales**2)


def _resolve_target(X, alpha: float) -> np.ndarray:
    n, p = X.shape
    if n > 2 * p:
        try:
            return mcd_estimate(X, alpha).scatter
        except (ValueError, NotPositiveDefiniteError) as exc:
            warnings.warn(
                f"global MCD target failed ({exc}); falling back to a diagonal "
                "robust-scale target, affine equivariance no longer applies",
                RuntimeWarning,
                stacklevel=3,
            )
    else:
        warnings.warn(
            "too few observations for an MCD target (n <= 2p); using a diagonal "
            "robust-scale target, affine equivariance no longer applies",
            RuntimeWarning,
            stacklevel=3,
        )
    return _diagonal_fallback_target(X)


def _neighborhood_inputs(dataset: Dataset, structure: NeighborhoodStructure, config: SsMrcdConfig):
    """Shared fit/exhaustive preamble: validation, target, transform, h sizes."""
    N = structure.n_neighborhoods
    if config.n_neighborhoods != N:
        raise ValueError(
            f"config weights are {config.n_neighborhoods}x{config.n_neighborhoods} "
            f"but the structure has {N} neighborhoods"
        )
    if N == 1 and config.lam != 0.0:
        raise ValueError("a single neighborhood admits no smoothing; set lam = 0")
    p = dataset.p
    for i, m in enumerate(structure.members):
        if len(m) < p + 2:
            raise ValueError(
                f"neighborhood {i} has only {len(m)} observations (< p + 2 = {p + 2}); "
                "use a coarser neighborhood grid"
            )
    hs = [math.ceil(config.alpha * len(m)) for m in structure.members]
    return hs


def _chain(Zs, hs, rho, config, start_combo, starts_per_nbhd, ld_offset, track):
    """Run synchronous C-step sweeps from one starting combination.

    Returns (subsets, Ks, objective, trace, converged, instrument rows).
    Sweep m computes every neighborhood's step from the frozen sweep-(m-1)
    K matrices and means.
    """
    W, lam = config.weights, config.lam
    N = len(Zs)
    p = Zs[0].shape[1]
    c_alpha = consistency_factor(config.alpha, p)
    eye = np.eye(p)

    def state_of(subsets):
        Ks, means = [], []
        for i in range(N):
            mean, cov = kernels.subset_mean_cov(Zs[i], subsets[i])
            Ks.append(rho[i] * eye + (1.0 - rho[i]) * c_alpha * cov)
            means.append(mean)
        return Ks, means

    def key_of(subsets):
        return tuple(s.tobytes() for s in subsets)

    current = [np.asarray(starts_per_nbhd[i][start_combo[i]], dtype=np.int64) for i in range(N)]
    Ks, means = state_of(current)
    obj = float(_objective_terms(Ks, W, lam, ld_offset).sum())
    trace = [obj]
    seen = {key_of(current)}
    best = (current, Ks, obj)
    converged = False
    rows = []

    for _ in range(config.max_iter):
        new = [cstep_neighborhood(i, Zs, hs[i], Ks, means, W, lam) for i in range(N)]
        new_Ks, new_means = state_of(new)
        if track:
            for i in range(N):
                before = log_det_pd(smoothed_covariance(i, Ks, W, lam))
                mixed = list(Ks)
                mixed[i] = new_Ks[i]
                after = log_det_pd(smoothed_covariance(i, mixed, W, lam))
                rows.append((before, after))
        obj = float(_objective_terms(new_Ks, W, lam, ld_offset).sum())
        trace.append(obj)
        if obj < best[2]:
            best = (new, new_Ks, obj)
        key = key_of(new)
        if key == key_of(current):
            # fixed point: the converged state is the chain's result
            best = (new, new_Ks, obj)
            converged = True
            break
        if key in seen:
            # synchronous updates can cycle; keep the best state seen
            converged = True
            break
        seen.add(key)
        current, Ks, means = new, new_Ks, new_means

    subsets, Ks, obj = best
    return subsets, Ks, obj, np.array(trace), converged, rows


def _start_combinations(counts, max_starts: int, seed: int):
    """All index combinations if few enough, else a seeded distinct sample."""
    total = 1
    for c in counts:
        total *= c
    if total <= max_starts:
        return [tuple(combo) for combo in itertools.product(*(range(c) for c in counts))]
    rng = np.random.default_rng(seed)
    chosen, seen = [], set()
    while len(chosen) < max_starts:
        combo = tuple(int(rng.integers(c)) for c in counts)
        if combo not in seen:
            seen.add(combo)
            chosen.append(combo)
    return chosen


def _assemble_model(dataset, structure, config, Zs, Q, lam_vec, target, rho,
                    subsets_local, Ks_z, traces, best_start, monotone_fraction,
                    converged, cstep_rows):
    """Back-transform to the original basis and build the immutable model."""
    B = Q * np.sqrt(lam_vec)
    N = structure.n_neighborhoods
    K = np.stack([B @ Ks_z[i] @ B.T for i in range(N)])
    K = (K + np.transpose(K, (0, 2, 1))) / 2.0
    Sigma = smoothed_all(K, config.weights, config.lam)
    Sigma = (Sigma + np.transpose(Sigma, (0, 2, 1))) / 2.0
    Sigma_inv = np.stack([pd_inverse(Sigma[i]) for i in range(N)])
    subsets = tuple(
        np.asarray(structure.members[i])[subsets_local[i]] for i in range(N)
    )
    means = np.stack([dataset.X[s].mean(axis=0) for s in subsets])
    obj = objective(K, config.weights, config.lam)
    return SsMrcdModel(
        config=config,
        structure=structure,
        target=target,
        eigen_vectors=Q,
        eigen_values=lam_vec,
        subsets=subsets,
        rho=np.asarray(rho, dtype=float),
        means=means,
        K=K,
        Sigma=Sigma,
        Sigma_inv=Sigma_inv,
        objective=obj,
        traces=tuple(traces),
        best_start=best_start,
        monotone_fraction=monotone_fraction,
        converged=converged,
        cstep_log_dets=None if cstep_rows is None else np.asarray(cstep_rows, dtype=float),
    )


def ssmrcd_fit(dataset: Dataset, structure: NeighborhoodStructure, config: SsMrcdConfig,
               *, target=None, track_cstep: bool = False, threads: int = 1) -> SsMrcdModel:
    """Fit the coupled-neighborhood smoothed covariance model.

    ``target`` overrides the global robust target scatter (tests and
    equivariance studies); ``track_cstep`` records per-neighborhood frozen-K
    determinant transitions; ``threads`` runs independent starting
    combinations concurrently without changing any result.
    """
    hs = _neighborhood_inputs(dataset, structure, config)
    X = dataset.X
    N = structure.n_neighborhoods
    if target is None:
        target = _resolve_target(X, config.alpha)
    else:
        target = np.asarray(target, dtype=float)
    Z, Q, lam_vec = transform_to_target_basis(X, target)
    ld_offset = float(np.sum(np.log(lam_vec)))
    Zs = [np.ascontiguousarray(Z[m]) for m in structure.members]

    starts_per_nbhd, rho = [], []
    for i in range(N):
        starts = deterministic_starts(Zs[i], hs[i])
        if not starts:
            raise ValueError(
                f"neighborhood {i}: no usable starting scatter; use a coarser grid"
            )
        if config.rho is not None:
            rho_i, retained = config.rho[i], starts
        else:
            rho_i, retained = select_rho(
                Zs[i], starts, config.alpha, config.max_cond, config.rho_grid
            )
        starts_per_nbhd.append(retained)
        rho.append(rho_i)

    max_starts = config.max_starts if config.max_starts is not None else 6 * N
    combos = _start_combinations(
        [len(s) for s in starts_per_nbhd], max_starts, config.seed
    )

    def run(combo):
        return _chain(Zs, hs, rho, config, combo, starts_per_nbhd, ld_offset, track_cstep)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, combos))
    else:
        results = [run(combo) for combo in combos]

    best_start = min(range(len(results)), key=lambda idx: results[idx][2])
    subsets_local, Ks_z, _, _, _, _ = results[best_start]
    traces = [r[3] for r in results]
    mono, transitions = 0, 0
    for t in traces:
        slack = 1e-12 * np.maximum(1.0, np.abs(t[:-1]))
        mono += int(np.sum(np.diff(t) <= slack))
        transitions += len(t) - 1
    monotone_fraction = mono / transitions if transitions else 1.0
    cstep_rows = None
    if track_cstep:
        cstep_rows = [row for r in results for row in r[5]]
    return _assemble_model(
        dataset, structure, config, Zs, Q, lam_vec, target, rho,
        subsets_local, Ks_z, traces, best_start, monotone_fraction,
        all(r[4] for r in results), cstep_rows,
    )


EXHAUSTIVE_GUARD = 10**6


def ssmrcd_exhaustive(dataset: Dataset, structure: NeighborhoodStructure,
                      config: SsMrcdConfig, *, target=None) -> SsMrcdModel:
    """Exact minimizer of the objective by enumerating every subset combination.

    Reference oracle for tests; refuses more than 10^6 combinations. Ridge
    weights are chosen exactly as in ``ssmrcd_fit`` (or taken from
    ``config.rho``) so the two optimize the identical objective.
    """
    hs = _neighborhood_inputs(dataset, structure, config)
    X = dataset.X
    N = structure.n_neighborhoods
    total = 1
    for i, m in enumerate(structure.members):
        total *= math.comb(len(m), hs[i])
        if total > EXHAUSTIVE_GUARD:
            raise ValueError(
                f"exhaustive enumeration needs more than {EXHAUSTIVE_GUARD} combinations"
            )
    if target is None:
        target = _resolve_target(X, config.alpha)
    else:
        target = np.asarray(target, dtype=float)
    Z, Q, lam_vec = transform_to_target_basis(X, target)
    Zs = [np.ascontiguousarray(Z[m]) for m in structure.members]

    rho = []
    for i in range(N):
        if config.rho is not None:
            rho.append(config.rho[i])
        else:
            starts = deterministic_starts(Zs[i], hs[i])
            if not starts:
                raise ValueError(
                    f"neighborhood {i}: no usable starting scatter; use a coarser grid"
                )
            rho_i, _ = select_rho(Zs[i], starts, config.alpha, config.max_cond, config.rho_grid)
            rho.append(rho_i)

    candidates, K_arrays = [], []
    for i in range(N):
        subs = [np.array(c, dtype=np.int64) for c in itertools.combinations(range(len(Zs[i])), hs[i])]
        candidates.append(subs)
        K_arrays.append(
            np.stack([k_matrix(Zs[i][s], rho[i], config.alpha) for s in subs])
        )

    W, lam = config.weights, config.lam
    index_grid = np.array(
        list(itertools.product(*(range(len(c)) for c in candidates))), dtype=np.int64
    )
    best_obj, best_idx = np.inf, None
    for lo in range(0, len(index_grid), 65536):
        block = index_grid[lo : lo + 65536]
        sel = [K_arrays[i][block[:, i]] for i in range(N)]
        obj = np.zeros(len(block))
        for i in range(N):
            Si = (1.0 - lam) * sel[i]
            for j in range(N):
                if lam > 0.0 and W[i, j] > 0.0:
                    Si = Si + lam * W[i, j] * sel[j]
            obj += np.linalg.det(Si)
        b = int(np.argmin(obj))
        if obj[b] < best_obj:
            best_obj, best_idx = float(obj[b]), block[b]

    subsets_local = [candidates[i][best_idx[i]] for i in range(N)]
    Ks_z = [K_arrays[i][best_idx[i]] for i in range(N)]
    ld_offset = float(np.sum(np.log(lam_vec)))
    trace = np.array([best_obj * math.exp(ld_offset)])
    return _assemble_model(
        dataset, structure, config, Zs, Q, lam_vec, target, rho,
        subsets_local, Ks_z, [trace], 0, 1.0, True, None,
    )
