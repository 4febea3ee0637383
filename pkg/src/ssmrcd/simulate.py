"""Simulation harness: smooth-transition grids, Matérn random fields, swap
contamination, detection metrics, and runtime / convergence studies.

Two generators are provided.  Setup 1 tiles [0, 20]^2 into areas whose
Gaussian mean and AR(1)-style correlation strengthen from the lower-left to
the upper-right corner.  Setup 2 draws a zero-mean random field whose
covariance separates into a Matérn spatial correlation times a Toeplitz
cross-variable matrix, sampled as L_s G L_v' with G standard normal.

Contamination swaps attribute vectors between observations, either fully at
random or by pairing the most extreme robust principal-component scores.
Swapping preserves the multiset of attribute rows, so global estimators are
blind to it; only local methods can see the damage.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .estimator import SsMrcdConfig, ssmrcd_fit
from .detect import detect_outliers
from .mcd import mcd_estimate
from .spatial import (
    Dataset,
    adjacency_weights,
    grid_neighborhoods,
    inverse_distance_weights,
    spatial_knn,
)

__all__ = [
    "SimTruth",
    "Metrics",
    "sigma_delta",
    "setup1_delta",
    "setup1_generate",
    "matern_correlation",
    "setup2_generate",
    "generate_field",
    "contaminate_random",
    "contaminate_extreme",
    "confusion_metrics",
    "run_detection_experiment",
    "tune_lambda",
    "run_benchmark",
    "convergence_trace",
]


@dataclass(frozen=True)
class SimTruth:
    """A generated dataset plus ground-truth outlier labels and provenance."""

    dataset: Dataset
    labels: np.ndarray
    descriptor: dict

    def __post_init__(self):
        if len(self.labels) != self.dataset.n:
            raise ValueError("one label per observation required")

    @property
    def n_outliers(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with the derived rates used in the studies.

    ``fnr`` is NaN when there are no true positives to miss, ``fpr`` is NaN
    when there are no true negatives; ``f1`` is 0 when its denominator is 0.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    fnr: float
    fpr: float
    f1: float

    @property
    def recall(self) -> float:
        return 1.0 - self.fnr


def sigma_delta(p: int, delta: float) -> np.ndarray:
    """Toeplitz correlation matrix with entries delta^|j-k|."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if p < 1:
        raise ValueError("dimension must be positive")
    j = np.arange(p)
    return delta ** np.abs(j[:, None] - j[None, :])


def _lattice(n_side: int) -> np.ndarray:
    g = np.linspace(0.0, 20.0, n_side)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()])


def setup1_delta(l: int, m: int, N_sim: int) -> float:
    """Correlation parameter of area (l, m), 1-indexed from the lower left."""
    r = math.isqrt(N_sim)
    if r * r != N_sim or N_sim < 1:
        raise ValueError(f"N_sim must be a perfect square, got {N_sim}")
    if not (1 <= l <= r and 1 <= m <= r):
        raise ValueError(f"area indices must lie in [1, {r}]")
    return (0.1 + l * 0.8 / r) * (0.1 + m * 0.8 / r)


def _area_index(s: np.ndarray, r: int) -> np.ndarray:
    # membership in (b_{l-1}, b_l] with the zero edge folded into cell 0
    borders = np.arange(1, r) * (20.0 / r)
    return np.searchsorted(borders, s, side="left")


def setup1_generate(n_side: int, N_sim: int, p: int, seed) -> SimTruth:
    """Lattice data whose per-area Gaussian law strengthens toward the
    upper-right corner of [0, 20]^2.

    ``N_sim`` must be a perfect square; its root sets the area grid. Area
    (l, m) draws from N(mu_lm, Sigma(delta_lm)) with mu_lm constant at the
    average of the two area-center coordinates and
    delta_lm = (0.1 + 0.8 l / r)(0.1 + 0.8 m / r), r = sqrt(N_sim).
    """
    if n_side < 2:
        raise ValueError("n_side must be at least 2")
    r = math.isqrt(N_sim)
    if r * r != N_sim or N_sim < 1:
        raise ValueError(f"N_sim must be a perfect square, got {N_sim}")
    coords = _lattice(n_side)
    n = len(coords)
    lx = _area_index(coords[:, 0], r)
    ly = _area_index(coords[:, 1], r)
    rng = np.random.default_rng(seed)
    X = np.empty((n, p))
    width = 20.0 / r
    for l in range(r):
        for m in range(r):
            mask = (lx == l) & (ly == m)
            if not mask.any():
                continue
            c1 = (l + 0.5) * width
            c2 = (m + 0.5) * width
            L = np.linalg.cholesky(sigma_delta(p, setup1_delta(l + 1, m + 1, N_sim)))
            X[mask] = (c1 + c2) / 2.0 + rng.normal(size=(mask.sum(), p)) @ L.T
    dataset = Dataset(ids=tuple(map(str, range(n))), coords=coords, X=X)
    desc = {"setup": 1, "n_side": n_side, "N_sim": N_sim, "p": p, "seed": seed}
    return SimTruth(dataset=dataset, labels=np.zeros(n, dtype=bool), descriptor=desc)


def matern_correlation(h, nu: float, a: float = 1.0):
    """Matérn correlation 2^(1-nu)/Gamma(nu) (a h)^nu K_nu(a h); 1 at h = 0."""
    if nu <= 0 or a <= 0:
        raise ValueError("smoothness and scale must be positive")
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    x = a * h
    with np.errstate(invalid="ignore", over="ignore"):
        val = np.where(
            x > 0,
            2 ** (1 - nu) / special.gamma(nu) * x**nu * special.kv(nu, np.where(x > 0, x, 1.0)),
            1.0,
        )
    if h.ndim == 0:
        return float(val)
    return val


def setup2_generate(n_side: int, p: int, nu: float, delta: float, seed) -> SimTruth:
    """Zero-mean Gaussian random field on the [0, 20]^2 lattice.

    Covariance between variable j at site s and variable k at site t is
    sigma_delta(p, delta)[j, k] * matern_correlation(|s - t|, nu).  Sampled
    exactly via the two Cholesky factors of the separable structure, with a
    1e-10 ridge on the spatial side.
    """
    if n_side < 2:
        raise ValueError("n_side must be at least 2")
    coords = _lattice(n_side)
    n = len(coords)
    d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=2)
    C = matern_correlation(d, nu) + 1e-10 * np.eye(n)
    try:
        if not np.all(np.isfinite(C)):
            raise np.linalg.LinAlgError
        L_s = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise ValueError(
            "spatial correlation is numerically singular even after the "
            "ridge; use a smaller grid or rougher smoothness"
        ) from None
    L_v = np.linalg.cholesky(sigma_delta(p, delta))
    rng = np.random.default_rng(seed)
    X = L_s @ rng.normal(size=(n, p)) @ L_v.T
    dataset = Dataset(ids=tuple(map(str, range(n))), coords=coords, X=X)
    desc = {
        "setup": 2, "n_side": n_side, "p": p, "nu": nu, "delta": delta, "seed": seed,
    }
    return SimTruth(dataset=dataset, labels=np.zeros(n, dtype=bool), descriptor=desc)


def generate_field(descriptor: dict, seed) -> SimTruth:
    """Dispatch to the setup named in ``descriptor`` (keys beyond the
    generator's own are ignored so experiment descriptors can be passed
    whole)."""
    setup = descriptor.get("setup")
    if setup == 1:
        return setup1_generate(
            descriptor["n_side"], descriptor["N_sim"], descriptor["p"], seed
        )
    if setup == 2:
        return setup2_generate(
            descriptor["n_side"], descriptor["p"], descriptor["nu"],
            descriptor["delta"], seed,
        )
    raise ValueError(f"unknown setup {setup!r}; expected 1 or 2")


def _swap_budget(n: int, beta: float) -> int:
    if not 0.0 <= beta < 0.5:
        raise ValueError(f"contamination level must lie in [0, 0.5), got {beta}")
    return (int(math.floor(beta * n)) // 2) * 2


def _apply_swaps(truth: SimTruth, X: np.ndarray, labels, extra: dict) -> SimTruth:
    ds = truth.dataset
    desc = dict(truth.descriptor)
    desc.update(extra)
    return SimTruth(
        dataset=Dataset(ids=ds.ids, coords=ds.coords, X=X),
        labels=labels,
        descriptor=desc,
    )


def contaminate_random(truth: SimTruth, beta: float, seed) -> SimTruth:
    """Swap the attribute vectors of uniformly chosen disjoint pairs.

    floor(beta * n) observations take part, rounded down to an even count.
    """
    n = truth.dataset.n
    count = _swap_budget(n, beta)
    X = truth.dataset.X.copy()
    labels = truth.labels.copy()
    if count:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(n, size=count, replace=False)
        a, b = chosen[0::2], chosen[1::2]
        X[a], X[b] = X[b].copy(), X[a].copy()
        labels[chosen] = True
    return _apply_swaps(
        truth, X, labels,
        {"contamination": "random", "beta": beta, "contamination_seed": seed},
    )


def contaminate_extreme(truth: SimTruth, beta: float, seed) -> SimTruth:
    """Swap extremes of the leading robust principal-component score.

    Scores are computed once on the clean data: median-centered rows
    projected on the top eigenvector of the 75% trimmed global scatter.
    Each round pairs the highest-score with the lowest-score eligible
    observation, swaps their attributes, and withdraws both points, their 15
    spatially nearest neighbors, and anyone holding a swapped point among
    their own 15 nearest from further swapping.  Stops early with a warning
    when eligibility runs out.
    """
    ds = truth.dataset
    n = ds.n
    count = _swap_budget(n, beta)
    X = ds.X.copy()
    labels = truth.labels.copy()
    if count:
        scatter = mcd_estimate(ds.X, 0.75).scatter
        _, vecs = np.linalg.eigh(scatter)
        scores = (ds.X - np.median(ds.X, axis=0)) @ vecs[:, -1]
        knn = spatial_knn(ds.coords, min(15, n - 1))
        eligible = np.ones(n, dtype=bool)
        done = 0
        while done < count // 2:
            if eligible.sum() < 2:
                warnings.warn(
                    f"swap eligibility exhausted after {done} of {count // 2} "
                    "pairs; returning the achieved contamination",
                    RuntimeWarning,
                )
                break
            hi = np.argmax(np.where(eligible, scores, -np.inf))
            lo = np.argmin(np.where(eligible, scores, np.inf))
            if hi == lo:
                break
            X[[hi, lo]] = X[[lo, hi]]
            labels[[hi, lo]] = True
            for j in (hi, lo):
                eligible[j] = False
                eligible[knn[j]] = False
                eligible[(knn == j).any(axis=1)] = False
            done += 1
    return _apply_swaps(
        truth, X, labels,
        {"contamination": "extreme", "beta": beta, "contamination_seed": seed},
    )


def confusion_metrics(labels, flags) -> Metrics:
    """Confusion counts of flags against ground-truth labels."""
    labels = np.asarray(labels, dtype=bool)
    flags = np.asarray(flags, dtype=bool)
    if labels.shape != flags.shape:
        raise ValueError(
            f"length mismatch: {labels.shape} labels vs {flags.shape} flags"
        )
    tp = int(np.sum(labels & flags))
    fp = int(np.sum(~labels & flags))
    fn = int(np.sum(labels & ~flags))
    tn = int(np.sum(~labels & ~flags))
    fnr = fn / (fn + tp) if fn + tp else float("nan")
    fpr = fp / (fp + tn) if fp + tn else float("nan")
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
    return Metrics(tp=tp, fp=fp, fn=fn, tn=tn, fnr=fnr, fpr=fpr, f1=f1)


DEFAULT_EST_OPTIONS = {"lam": 0.5, "alpha": 0.75}


def _structure_and_config(coords, descriptor, est_options):
    gx, gy = descriptor.get("grid", (3, 3))
    structure = grid_neighborhoods(coords, gx, gy)
    kind = descriptor.get("weights", "inverse_distance")
    if kind == "inverse_distance":
        W = inverse_distance_weights(structure.centers)
    elif kind == "adjacency":
        W = adjacency_weights(structure)
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    opts = dict(DEFAULT_EST_OPTIONS)
    opts.update(est_options or {})
    return structure, SsMrcdConfig(weights=W, **opts)


def _contaminate(truth, descriptor, seed):
    beta = descriptor.get("beta", 0.0)
    kind = descriptor.get("contamination", "random" if beta else "none")
    if kind == "none" or beta == 0.0:
        return truth
    if kind == "random":
        return contaminate_random(truth, beta, seed)
    if kind == "extreme":
        return contaminate_extreme(truth, beta, seed)
    raise ValueError(f"unknown contamination kind {kind!r}")


def _summary(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0 or np.all(np.isnan(v)):
        return {"mean": float("nan"), "q05": float("nan"), "q95": float("nan")}
    return {
        "mean": float(np.nanmean(v)),
        "q05": float(np.nanquantile(v, 0.05)),
        "q95": float(np.nanquantile(v, 0.95)),
    }


def run_detection_experiment(descriptor: dict, est_options=None, k: int = 10,
                             replications: int = 20, seed=0):
    """Replicated generate / contaminate / fit / detect / score pipeline.

    Returns ``(rows, summary)``: one tidy dict per replication (an ``error``
    string and NaN metrics when a replication's fit fails) and mean / 5% /
    95% aggregates for each metric.  Sub-seeds are derived from ``seed`` and
    the replication index, so a rerun reproduces the table exactly.
    """
    rows = []
    for rep in range(replications):
        truth = generate_field(descriptor, (seed, rep, 0))
        truth = _contaminate(truth, descriptor, (seed, rep, 1))
        row = {"rep": rep, "n_outliers": truth.n_outliers}
        try:
            structure, cfg = _structure_and_config(
                truth.dataset.coords, descriptor, est_options
            )
            model = ssmrcd_fit(truth.dataset, structure, cfg)
            report = detect_outliers(truth.dataset, model, k=k)
            m = confusion_metrics(truth.labels, report.flags)
            row.update(
                tp=m.tp, fp=m.fp, fn=m.fn, tn=m.tn, fnr=m.fnr, fpr=m.fpr,
                f1=m.f1, flagged=report.n_flagged, cutoff=report.cutoff,
                error="",
            )
        except Exception as exc:  # recorded, not fatal
            row.update(
                tp=None, fp=None, fn=None, tn=None, fnr=float("nan"),
                fpr=float("nan"), f1=float("nan"), flagged=None,
                cutoff=float("nan"), error=f"{type(exc).__name__}: {exc}",
            )
        rows.append(row)
    summary = {
        name: _summary([r[name] for r in rows]) for name in ("fnr", "fpr", "f1")
    }
    return rows, summary


def tune_lambda(dataset: Dataset, structure, base_config: SsMrcdConfig, lambdas,
                k: int = 10, n_swaps: int = 10, trials: int = 10, seed=0):
    """Swap-planting sweep over the smoothing weight.

    Assumes the dataset itself is clean.  Every trial plants the same
    ``n_swaps`` random attribute swaps (rounded down to an even count) for
    all lambda values, then fits and detects per lambda.  Returns tidy rows
    of (lam, trial, recall on planted swaps, total flags) plus per-lambda
    mean aggregates.  No winner is chosen; the trade-off is the caller's.
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise ValueError("need at least one lambda value")
    n = dataset.n
    count = (int(n_swaps) // 2) * 2
    rows = []
    for trial in range(trials):
        # plant exactly `count` swaps rather than a beta fraction
        rng = np.random.default_rng((seed, trial))
        X = dataset.X.copy()
        labels = np.zeros(n, dtype=bool)
        if count:
            chosen = rng.choice(n, size=count, replace=False)
            a, b = chosen[0::2], chosen[1::2]
            X[a], X[b] = X[b].copy(), X[a].copy()
            labels[chosen] = True
        swapped = Dataset(ids=dataset.ids, coords=dataset.coords, X=X)
        for lam in lambdas:
            cfg = replace(base_config, lam=float(lam))
            row = {"lam": float(lam), "trial": trial, "planted": int(labels.sum())}
            try:
                model = ssmrcd_fit(swapped, structure, cfg)
                report = detect_outliers(swapped, model, k=k)
                m = confusion_metrics(labels, report.flags)
                row.update(recall=m.recall, flagged=report.n_flagged, error="")
            except Exception as exc:
                row.update(recall=float("nan"), flagged=None,
                           error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
    summary = {
        float(lam): {
            "recall": _summary([r["recall"] for r in rows if r["lam"] == lam]),
            "flagged": _summary([r["flagged"] for r in rows if r["lam"] == lam]),
        }
        for lam in lambdas
    }
    return rows, summary


BENCH_BASELINE = {"p": 5, "n": 441, "N": 9, "lam": 0.5}


def _bench_instance(n: int, N: int, p: int, rng) -> tuple:
    gside = math.isqrt(N)
    if gside * gside != N:
        raise ValueError(f"N values must be perfect squares, got {N}")
    coords = rng.uniform(0.0, 20.0, size=(n, 2))
    X = rng.normal(size=(n, p))
    ds = Dataset(ids=tuple(map(str, range(n))), coords=coords, X=X)
    structure = grid_neighborhoods(coords, gside, gside)
    W = inverse_distance_weights(structure.centers)
    return ds, structure, W


def run_benchmark(p_grid=(), n_grid=(), N_grid=(), lam_grid=(),
                  baseline=None, replications: int = 5, seed=0,
                  alpha: float = 0.75):
    """Univariate runtime sweeps around a fixed baseline configuration.

    Each parameter's grid is timed with the other three held at the
    baseline, on synthetic standard-normal data over uniform coordinates.
    The first (warm-up) fit of every cell is discarded.  Runs serially on
    purpose; timing under contention is meaningless.
    """
    base = dict(BENCH_BASELINE)
    base.update(baseline or {})
    rows = []
    grids = (("p", p_grid), ("n", n_grid), ("N", N_grid), ("lam", lam_grid))
    for gi, (name, grid) in enumerate(grids):
        for vi, value in enumerate(grid):
            cell = dict(base)
            cell[name] = value
            rng = np.random.default_rng((seed, gi, vi))
            ds, structure, W = _bench_instance(
                int(cell["n"]), int(cell["N"]), int(cell["p"]), rng
            )
            cfg = SsMrcdConfig(lam=float(cell["lam"]), alpha=alpha, weights=W)
            for rep in range(replications + 1):
                t0 = time.perf_counter()
                ssmrcd_fit(ds, structure, cfg)
                elapsed = time.perf_counter() - t0
                if rep == 0:
                    continue  # warm-up
                rows.append(
                    {"parameter": name, "value": float(value), "rep": rep - 1,
                     "seconds": elapsed}
                )
    summary = {}
    for name, value in {(r["parameter"], r["value"]) for r in rows}:
        cell_rows = [r["seconds"] for r in rows
                     if r["parameter"] == name and r["value"] == value]
        summary[(name, value)] = _summary(cell_rows)
    return rows, summary


def convergence_trace(descriptor: dict, est_options=None, seed=0):
    """Objective path of every starting combination on one generated field.

    Returns tidy rows (start, sweep, objective) and a diagnostics dict with
    the monotone-transition fraction, convergence flag, and the fraction of
    instrumented single-neighborhood C-steps that did not increase their
    smoothed determinant.
    """
    truth = generate_field(descriptor, (seed, 0, 0))
    truth = _contaminate(truth, descriptor, (seed, 0, 1))
    structure, cfg = _structure_and_config(
        truth.dataset.coords, descriptor, est_options
    )
    model = ssmrcd_fit(truth.dataset, structure, cfg, track_cstep=True)
    rows = [
        {"start": s, "sweep": t, "objective": float(v)}
        for s, trace in enumerate(model.traces)
        for t, v in enumerate(trace)
    ]
    before, after = model.cstep_log_dets.T
    ok = after <= before + 1e-10 * np.maximum(1.0, np.abs(before))
    info = {
        "monotone_fraction": model.monotone_fraction,
        "converged": model.converged,
        "best_start": model.best_start,
        "objective": model.objective,
        "n_starts": len(model.traces),
        "substep_monotone_fraction": float(ok.mean()),
    }
    return rows, info
