#!/usr/bin/env python3
"""Time the compiled kernels against the numpy fallback.

Runs the three hot kernels on a grid of problem sizes (best-of-``--repeats``
wall time each) and, with ``--fit``, also times one full estimator fit per
backend in subprocesses, since the backend is fixed at import.

Usage:
    python benchmarks/bench_kernels.py [--repeats 7] [--fit]
"""

from __future__ import annotations

import argparse
import subprocess
import sys
import time

import numpy as np

from ssmrcd import _kernels_py

try:
    from ssmrcd import _kernels_cy
except ImportError:
    _kernels_cy = None

SIZES = [(50, 2), (200, 5), (500, 10), (2000, 20)]


def best_of(repeats, fn, *args):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def problems(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    center = rng.normal(size=p)
    A = rng.normal(size=(p, p))
    inv_cov = A @ A.T + np.eye(p)
    idx = np.sort(rng.permutation(n)[: max(2, (3 * n) // 4)])
    return X, center, inv_cov, idx


def kernel_rows(repeats):
    rows = []
    for n, p in SIZES:
        X, center, inv_cov, idx = problems(n, p)
        cases = [
            ("mahalanobis_sq", lambda mod: mod.mahalanobis_sq(X, center, inv_cov)),
            ("subset_mean_cov", lambda mod: mod.subset_mean_cov(X, idx)),
            ("min_maha_sq", lambda mod: mod.min_maha_sq(X, center, inv_cov)),
        ]
        for name, call in cases:
            py = best_of(repeats, call, _kernels_py)
            cy = best_of(repeats, call, _kernels_cy) if _kernels_cy else None
            rows.append((name, n, p, py, cy))
    return rows


FIT_SNIPPET = """
import time
import numpy as np
from ssmrcd.estimator import SsMrcdConfig, ssmrcd_fit
from ssmrcd.spatial import Dataset, grid_neighborhoods, inverse_distance_weights

rng = np.random.default_rng(11)
n, p = 441, 5
coords = rng.uniform(0, 20, size=(n, 2))
ds = Dataset(ids=tuple(f"s{i}" for i in range(n)), coords=coords,
             X=rng.normal(size=(n, p)))
ns = grid_neighborhoods(coords, 3, 3)
cfg = SsMrcdConfig(lam=0.5, alpha=0.75, weights=inverse_distance_weights(ns.centers))
ssmrcd_fit(ds, ns, cfg)  # warm-up
t0 = time.perf_counter()
ssmrcd_fit(ds, ns, cfg)
print(time.perf_counter() - t0)
"""


def fit_seconds(backend):
    out = subprocess.run(
        [sys.executable, "-c", FIT_SNIPPET],
        capture_output=True, text=True, check=True,
        env={"SSMRCD_BACKEND": backend, "PATH": "/usr/bin:/bin"},
    )
    return float(out.stdout.strip())


def fmt_seconds(s):
    return "-" if s is None else f"{s * 1e6:9.1f}"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--fit", action="store_true",
                    help="also time one 441-point fit per backend")
    args = ap.parse_args(argv)

    if _kernels_cy is None:
        print("compiled extension not built; timing the python backend only\n")

    header = f"{'kernel':<16} {'n':>5} {'p':>3} {'python us':>10} {'compiled us':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, n, p, py, cy in kernel_rows(args.repeats):
        speed = "-" if cy is None else f"{py / cy:7.1f}x"
        print(f"{name:<16} {n:>5} {p:>3} {fmt_seconds(py):>10} {fmt_seconds(cy):>12} {speed:>8}")

    if args.fit:
        print()
        py = fit_seconds("python")
        line = f"full fit (441 x 5, 9 neighborhoods): python {py:.3f}s"
        if _kernels_cy is not None:
            cy = fit_seconds("compiled")
            line += f", compiled {cy:.3f}s, speedup {py / cy:.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
