"""Command-line front end: fit, detect, simulate, bench, and tune.

A JSON config file is the single source of truth for every subcommand; the
--lambda/--k/--seed/--out flags override individual entries for quick
exploration and are echoed into the outputs.  Datasets travel as CSV with
header ``id,coord_1,coord_2,<variable names...>``, fitted models as a JSON
document that reconstructs the in-memory model exactly (floats use
round-trip decimal formatting throughout).

Exit status: 0 on success, 1 for configuration or data validation errors,
2 for computation failures.  Error lines are printed to stderr with an
``error:`` prefix.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .detect import detect_outliers
from .estimator import SsMrcdConfig, SsMrcdModel, ssmrcd_fit
from .numerics import chi2_quantile, pd_inverse
from .simulate import (
    run_benchmark,
    run_detection_experiment,
    tune_lambda,
)
from .spatial import (
    Dataset,
    NeighborhoodStructure,
    adjacency_weights,
    grid_neighborhoods,
    inverse_distance_weights,
)

__all__ = [
    "CliError",
    "load_dataset",
    "save_dataset",
    "model_to_dict",
    "model_from_dict",
    "cmd_fit",
    "cmd_detect",
    "cmd_simulate",
    "cmd_bench",
    "cmd_tune",
    "main",
]

ELLIPSE_LEVEL = 0.975
ELLIPSE_POINTS = 64


class CliError(Exception):
    """Validation-grade failure: bad config, bad file, bad schema (exit 1)."""


# ---------------------------------------------------------------- datasets

def _parse_cell(text: str, line: int, column: str) -> float:
    if text.strip() == "":
        raise CliError(f"line {line}, column '{column}': empty cell")
    try:
        return float(text)
    except ValueError:
        raise CliError(
            f"line {line}, column '{column}': could not parse {text!r} as a number"
        ) from None


def load_dataset(path) -> Dataset:
    """Read a dataset CSV; row order is preserved.

    Expected header: ``id,coord_1,coord_2,<at least one variable>``.  Every
    parse problem is reported with its line number and column name.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CliError(f"{path}: file is empty") from None
            if len(header) < 4 or [h.strip() for h in header[:3]] != ["id", "coord_1", "coord_2"]:
                raise CliError(
                    f"{path}: header must be 'id,coord_1,coord_2,<variables...>', "
                    f"got {','.join(header)!r}"
                )
            var_names = [h.strip() for h in header[3:]]
            ids, coords, values = [], [], []
            seen = {}
            for line, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise CliError(
                        f"{path}: line {line}: expected {len(header)} fields, got {len(row)}"
                    )
                obs_id = row[0].strip()
                if obs_id == "":
                    raise CliError(f"{path}: line {line}, column 'id': empty cell")
                if obs_id in seen:
                    raise CliError(
                        f"{path}: line {line}, column 'id': duplicate id {obs_id!r} "
                        f"(first seen on line {seen[obs_id]})"
                    )
                seen[obs_id] = line
                try:
                    coords.append(
                        [_parse_cell(row[1], line, "coord_1"),
                         _parse_cell(row[2], line, "coord_2")]
                    )
                    values.append(
                        [_parse_cell(cell, line, name)
                         for cell, name in zip(row[3:], var_names)]
                    )
                except CliError as exc:
                    raise CliError(f"{path}: {exc}") from None
                ids.append(obs_id)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    if len(ids) < 4:
        raise CliError(f"{path}: need at least 4 data rows, found {len(ids)}")
    ds = Dataset(ids=tuple(ids), coords=np.array(coords), X=np.array(values))
    object.__setattr__(ds, "var_names", tuple(var_names))
    return ds


def save_dataset(dataset: Dataset, path, var_names=None) -> None:
    """Write a dataset back to the CSV schema read by ``load_dataset``."""
    names = var_names or getattr(dataset, "var_names", None)
    if names is None:
        names = [f"var_{j + 1}" for j in range(dataset.p)]
    if len(names) != dataset.p:
        raise CliError(f"expected {dataset.p} variable names, got {len(names)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "coord_1", "coord_2", *names])
        for i in range(dataset.n):
            writer.writerow(
                [dataset.ids[i],
                 repr(float(dataset.coords[i, 0])), repr(float(dataset.coords[i, 1])),
                 *(repr(float(v)) for v in dataset.X[i])]
            )


# ------------------------------------------------------------ model files

def _array(a) -> list:
    return np.asarray(a).tolist()


def model_to_dict(model: SsMrcdModel, ids, config_echo: dict) -> dict:
    """Serialize a fitted model with enough fidelity to rebuild it exactly."""
    st = model.structure
    cfg = model.config
    neighborhoods = [
        {
            "index": i,
            "center": _array(st.centers[i]),
            "member_ids": [ids[j] for j in st.members[i]],
            "rho": float(model.rho[i]),
            "subset_ids": [ids[j] for j in model.subsets[i]],
            "mu": _array(model.means[i]),
            "K": _array(model.K[i]),
            "Sigma": _array(model.Sigma[i]),
            "Sigma_inv": _array(model.Sigma_inv[i]),
        }
        for i in range(model.n_neighborhoods)
    ]
    return {
        "format": "ssmrcd-model",
        "version": 1,
        "config": dict(config_echo),
        "estimator": {
            "lambda": cfg.lam,
            "alpha": cfg.alpha,
            "max_cond": cfg.max_cond,
            "max_starts": cfg.max_starts,
            "max_iter": cfg.max_iter,
            "seed": cfg.seed,
            "rho_grid": list(cfg.rho_grid),
            "fixed_rho": None if cfg.rho is None else list(cfg.rho),
        },
        "ids": list(ids),
        "weights": _array(cfg.weights),
        "structure": {
            "assignment": _array(st.assignment),
            "centers": _array(st.centers),
            "grid_shape": None if st.grid_shape is None else list(st.grid_shape),
            "cells": None if st.cells is None
            else [[list(c) for c in group] for group in st.cells],
        },
        "target": _array(model.target),
        "eigen_vectors": _array(model.eigen_vectors),
        "eigen_values": _array(model.eigen_values),
        "neighborhoods": neighborhoods,
        "objective": model.objective,
        "converged": model.converged,
        "best_start": model.best_start,
        "monotone_fraction": model.monotone_fraction,
        "traces": [_array(t) for t in model.traces],
        "trace_summary": {
            "n_starts": len(model.traces),
            "sweeps_per_start": [len(t) for t in model.traces],
            "final_objectives": [float(t[-1]) for t in model.traces],
        },
    }


def model_from_dict(doc: dict):
    """Rebuild ``(model, ids)`` from a model document."""
    if doc.get("format") != "ssmrcd-model" or doc.get("version") != 1:
        raise CliError("not a version-1 ssmrcd model file")
    try:
        ids = tuple(str(i) for i in doc["ids"])
        est = doc["estimator"]
        cfg = SsMrcdConfig(
            lam=est["lambda"],
            alpha=est["alpha"],
            weights=np.array(doc["weights"], dtype=float),
            max_cond=est["max_cond"],
            rho_grid=tuple(est["rho_grid"]),
            max_starts=est["max_starts"],
            max_iter=est["max_iter"],
            seed=est["seed"],
            rho=None if est["fixed_rho"] is None else tuple(est["fixed_rho"]),
        )
        sd = doc["structure"]
        assignment = np.asarray(sd["assignment"], dtype=np.int64)
        members = tuple(
            np.flatnonzero(assignment == i)
            for i in range(int(assignment.max()) + 1 if assignment.size else 0)
        )
        structure = NeighborhoodStructure(
            assignment=assignment,
            members=members,
            centers=np.asarray(sd["centers"], dtype=float),
            grid_shape=None if sd["grid_shape"] is None else tuple(sd["grid_shape"]),
            cells=None if sd["cells"] is None
            else tuple(tuple(tuple(c) for c in group) for group in sd["cells"]),
        )
        index_of = {obs_id: j for j, obs_id in enumerate(ids)}
        nbhd = doc["neighborhoods"]
        model = SsMrcdModel(
            config=cfg,
            structure=structure,
            target=np.asarray(doc["target"], dtype=float),
            eigen_vectors=np.asarray(doc["eigen_vectors"], dtype=float),
            eigen_values=np.asarray(doc["eigen_values"], dtype=float),
            subsets=tuple(
                np.asarray(sorted(index_of[s] for s in nb["subset_ids"]), dtype=np.int64)
                for nb in nbhd
            ),
            rho=np.asarray([nb["rho"] for nb in nbhd], dtype=float),
            means=np.asarray([nb["mu"] for nb in nbhd], dtype=float),
            K=np.asarray([nb["K"] for nb in nbhd], dtype=float),
            Sigma=np.asarray([nb["Sigma"] for nb in nbhd], dtype=float),
            Sigma_inv=np.asarray([nb["Sigma_inv"] for nb in nbhd], dtype=float),
            objective=float(doc["objective"]),
            traces=tuple(np.asarray(t, dtype=float) for t in doc["traces"]),
            best_start=int(doc["best_start"]),
            monotone_fraction=float(doc["monotone_fraction"]),
            converged=bool(doc["converged"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed model file: {exc}") from None
    return model, ids


# ----------------------------------------------------------- file helpers

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row.get(name)) for name in fieldnames])


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path} is not valid JSON: {exc}") from None


def _check_keys(cfg: dict, allowed, where: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise CliError(
            f"unknown {where} key(s): {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted(allowed))}"
        )


def _out_dir(cfg) -> Path:
    out = Path(cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _structure_from_config(cfg, coords):
    grid = cfg.get("grid", [3, 3])
    if not isinstance(grid, (list, tuple)) or len(grid) not in (2, 3):
        raise CliError("'grid' must be [gx, gy] or [gx, gy, min_size]")
    gx, gy = int(grid[0]), int(grid[1])
    min_size = int(grid[2]) if len(grid) == 3 else 2
    structure = grid_neighborhoods(coords, gx, gy, min_size=min_size)
    kind = cfg.get("weights", "inverse_distance")
    if structure.n_neighborhoods == 1:
        # the only row-stochastic-with-zero-diagonal option for N=1
        W = np.zeros((1, 1))
    elif kind == "inverse_distance":
        W = inverse_distance_weights(structure.centers)
    elif kind == "adjacency":
        W = adjacency_weights(structure)
    else:
        raise CliError(f"unknown weights kind {kind!r}")
    return structure, W


ESTIMATOR_KEYS = ("lambda", "alpha", "max_cond", "max_starts", "max_iter")


def _estimator_options(cfg) -> dict:
    sub = cfg.get("estimator", {})
    if not isinstance(sub, dict):
        raise CliError("'estimator' must be an object")
    _check_keys(sub, ESTIMATOR_KEYS, "estimator")
    opts = dict(sub)
    if "lambda" in opts:
        opts["lam"] = opts.pop("lambda")
    return opts


# ------------------------------------------------------------ subcommands

def cmd_fit(cfg: dict, threads: int = 1) -> int:
    _check_keys(
        cfg,
        ("data", "lambda", "alpha", "grid", "weights", "max_cond", "max_starts",
         "max_iter", "rho", "seed", "out"),
        "fit config",
    )
    if "data" not in cfg:
        raise CliError("fit config needs a 'data' path")
    dataset = load_dataset(cfg["data"])
    structure, W = _structure_from_config(cfg, dataset.coords)
    try:
        est = SsMrcdConfig(
            lam=float(cfg.get("lambda", 0.5)),
            alpha=float(cfg.get("alpha", 0.75)),
            weights=W,
            max_cond=float(cfg.get("max_cond", 50.0)),
            max_starts=cfg.get("max_starts"),
            max_iter=int(cfg.get("max_iter", 100)),
            seed=int(cfg.get("seed", 0)),
            rho=None if cfg.get("rho") is None else tuple(cfg["rho"]),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None

    model = ssmrcd_fit(dataset, structure, est, threads=threads)

    out = Path(cfg.get("out", "model.json"))
    if out.is_dir():
        out = out / "model.json"
    _write_json(out, model_to_dict(model, dataset.ids, cfg))
    print(
        f"fit: n={dataset.n} p={dataset.p} N={model.n_neighborhoods} "
        f"objective={model.objective!r} converged={model.converged} -> {out}"
    )
    return 0


def _ellipse_rows(model: SsMrcdModel):
    """Boundary points of each Sigma_i's tolerance ellipse in the plane of
    the target's two leading eigenvectors."""
    order = np.argsort(model.eigen_values)[::-1][:2]
    P = model.eigen_vectors[:, order]  # p x 2, columns = leading directions
    q = chi2_quantile(ELLIPSE_LEVEL, 2)
    theta = np.linspace(0.0, 2.0 * math.pi, ELLIPSE_POINTS, endpoint=False)
    circle = np.column_stack([np.cos(theta), np.sin(theta)])
    rows = []
    for i in range(model.n_neighborhoods):
        S2 = P.T @ model.Sigma[i] @ P
        L = np.linalg.cholesky(S2)
        center = P.T @ model.means[i]
        pts = center + math.sqrt(q) * circle @ L.T
        for t in range(ELLIPSE_POINTS):
            rows.append(
                {"neighborhood": i, "point": t,
                 "axis_1": pts[t, 0], "axis_2": pts[t, 1],
                 "center_1": center[0], "center_2": center[1]}
            )
    return rows


def cmd_detect(cfg: dict) -> int:
    _check_keys(cfg, ("data", "model", "k", "out"), "detect config")
    for key in ("data", "model"):
        if key not in cfg:
            raise CliError(f"detect config needs a '{key}' path")
    dataset = load_dataset(cfg["data"])
    model, ids = model_from_dict(_load_json(cfg["model"]))
    if dataset.ids != ids:
        if set(dataset.ids) == set(ids):
            raise CliError(
                "model and data contain the same ids in different orders; "
                "detection requires the fitting order"
            )
        missing = sorted(set(ids) - set(dataset.ids))[:3]
        extra = sorted(set(dataset.ids) - set(ids))[:3]
        raise CliError(
            f"id mismatch between model and data (missing e.g. {missing}, "
            f"unexpected e.g. {extra})"
        )
    k = int(cfg.get("k", 10))

    report = detect_outliers(dataset, model, k=k)

    out = _out_dir(cfg)
    _write_csv(
        out / "report.csv",
        ["id", "neighborhood", "next_distance", "cutoff", "ratio", "flag", "nearest_id"],
        [
            {"id": report.ids[i], "neighborhood": int(report.neighborhood[i]),
             "next_distance": float(report.next_distance[i]),
             "cutoff": report.cutoff, "ratio": float(report.ratio[i]),
             "flag": bool(report.flags[i]), "nearest_id": report.nearest_id[i]}
            for i in range(report.n)
        ],
    )
    _write_csv(
        out / "ellipses.csv",
        ["neighborhood", "point", "axis_1", "axis_2", "center_1", "center_2"],
        _ellipse_rows(model),
    )
    center = np.median(dataset.X, axis=0)
    T_inv = pd_inverse(model.target)
    diff = dataset.X - center
    global_md = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", diff, T_inv, diff), 0.0))
    _write_csv(
        out / "distances.csv",
        ["id", "neighborhood", "next_distance", "global_distance", "flag"],
        [
            {"id": report.ids[i], "neighborhood": int(report.neighborhood[i]),
             "next_distance": float(report.next_distance[i]),
             "global_distance": float(global_md[i]), "flag": bool(report.flags[i])}
            for i in range(report.n)
        ],
    )
    _write_json(out / "detect_config.json", {"config": cfg, "k": k})
    print(
        f"detect: {report.n_flagged}/{report.n} flagged, "
        f"cutoff={report.cutoff!r} -> {out}/report.csv"
    )
    return 0


SIM_KEYS = ("setup", "n_side", "p", "N_sim", "nu", "delta", "beta",
            "contamination", "grid", "weights", "estimator", "k",
            "replications", "seed", "out")
DESCRIPTOR_KEYS = ("setup", "n_side", "p", "N_sim", "nu", "delta", "beta",
                   "contamination", "grid", "weights")


def cmd_simulate(cfg: dict) -> int:
    _check_keys(cfg, SIM_KEYS, "simulate config")
    if "setup" not in cfg:
        raise CliError("simulate config needs 'setup' (1 or 2)")
    descriptor = {k: v for k, v in cfg.items() if k in DESCRIPTOR_KEYS}
    if "grid" in descriptor:
        descriptor["grid"] = tuple(int(g) for g in descriptor["grid"])
    est_options = _estimator_options(cfg)
    rows, summary = run_detection_experiment(
        descriptor,
        est_options,
        k=int(cfg.get("k", 10)),
        replications=int(cfg.get("replications", 20)),
        seed=int(cfg.get("seed", 0)),
    )
    out = _out_dir(cfg)
    _write_csv(
        out / "simulate_raw.csv",
        ["rep", "n_outliers", "tp", "fp", "fn", "tn", "fnr", "fpr", "f1",
         "flagged", "cutoff", "error"],
        rows,
    )
    _write_csv(
        out / "simulate_summary.csv",
        ["metric", "mean", "q05", "q95"],
        [{"metric": name, **stats} for name, stats in summary.items()],
    )
    _write_json(out / "simulate_config.json", {"config": cfg})
    failed = sum(1 for r in rows if r["error"])
    print(
        f"simulate: {len(rows)} replications ({failed} failed), "
        f"mean f1={summary['f1']['mean']!r} mean fpr={summary['fpr']['mean']!r} -> {out}"
    )
    return 0


def cmd_bench(cfg: dict) -> int:
    _check_keys(
        cfg,
        ("p_grid", "n_grid", "N_grid", "lambda_grid", "baseline",
         "replications", "seed", "alpha", "out"),
        "bench config",
    )
    baseline = cfg.get("baseline", {})
    if not isinstance(baseline, dict):
        raise CliError("'baseline' must be an object")
    _check_keys(baseline, ("p", "n", "N", "lambda"), "bench baseline")
    baseline = dict(baseline)
    if "lambda" in baseline:
        baseline["lam"] = baseline.pop("lambda")
    rows, summary = run_benchmark(
        p_grid=tuple(cfg.get("p_grid", ())),
        n_grid=tuple(cfg.get("n_grid", ())),
        N_grid=tuple(cfg.get("N_grid", ())),
        lam_grid=tuple(cfg.get("lambda_grid", ())),
        baseline=baseline,
        replications=int(cfg.get("replications", 5)),
        seed=int(cfg.get("seed", 0)),
        alpha=float(cfg.get("alpha", 0.75)),
    )
    if not rows:
        raise CliError("all benchmark grids are empty")
    out = _out_dir(cfg)
    _write_csv(out / "bench_raw.csv", ["parameter", "value", "rep", "seconds"], rows)
    _write_csv(
        out / "bench_summary.csv",
        ["parameter", "value", "mean", "q05", "q95"],
        [
            {"parameter": name, "value": value, **stats}
            for (name, value), stats in sorted(summary.items())
        ],
    )
    _write_json(out / "bench_config.json", {"config": cfg})
    print(f"bench: {len(rows)} timed fits over {len(summary)} cells -> {out}")
    return 0


def cmd_tune(cfg: dict) -> int:
    _check_keys(
        cfg,
        ("data", "grid", "weights", "estimator", "lambda_grid", "k",
         "n_swaps", "trials", "seed", "out"),
        "tune config",
    )
    if "data" not in cfg:
        raise CliError("tune config needs a 'data' path")
    lambdas = cfg.get("lambda_grid")
    if not lambdas:
        raise CliError("tune config needs a nonempty 'lambda_grid'")
    dataset = load_dataset(cfg["data"])
    structure, W = _structure_from_config(cfg, dataset.coords)
    opts = _estimator_options(cfg)
    opts.setdefault("lam", 0.0)
    opts.setdefault("alpha", 0.75)
    try:
        base = SsMrcdConfig(weights=W, **opts)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc)) from None
    rows, summary = tune_lambda(
        dataset, structure, base, [float(v) for v in lambdas],
        k=int(cfg.get("k", 10)),
        n_swaps=int(cfg.get("n_swaps", 10)),
        trials=int(cfg.get("trials", 10)),
        seed=int(cfg.get("seed", 0)),
    )
    out = _out_dir(cfg)
    _write_csv(
        out / "tune_raw.csv",
        ["lam", "trial", "planted", "recall", "flagged", "error"],
        rows,
    )
    _write_csv(
        out / "tune_summary.csv",
        ["lam", "recall_mean", "recall_q05", "recall_q95",
         "flagged_mean", "flagged_q05", "flagged_q95"],
        [
            {"lam": lam,
             "recall_mean": stats["recall"]["mean"],
             "recall_q05": stats["recall"]["q05"],
             "recall_q95": stats["recall"]["q95"],
             "flagged_mean": stats["flagged"]["mean"],
             "flagged_q05": stats["flagged"]["q05"],
             "flagged_q95": stats["flagged"]["q95"]}
            for lam, stats in sorted(summary.items())
        ],
    )
    _write_json(out / "tune_config.json", {"config": cfg})
    best_recall = max(summary.values(), key=lambda s: s["recall"]["mean"])
    print(
        f"tune: {len(lambdas)} lambda values x {int(cfg.get('trials', 10))} trials, "
        f"max mean recall={best_recall['recall']['mean']!r} -> {out}"
    )
    return 0


# ------------------------------------------------------------------ main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmrcd",
        description="Spatially smoothed robust covariance estimation and "
        "local outlier detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit", "estimate the coupled neighborhood covariances"),
        ("detect", "flag local outliers using a fitted model"),
        ("simulate", "replicated detection experiment on synthetic fields"),
        ("bench", "runtime benchmark sweeps"),
        ("tune", "swap-based smoothing-weight exploration"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="override the smoothing weight")
        p.add_argument("--k", type=int, default=None,
                       help="override the neighbor count")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", default=None, help="override the output path")
        p.add_argument("--threads", type=int, default=None,
                       help="fitting threads (default: SSMRCD_THREADS or all cores)")
    return parser


_OVERRIDE_TARGETS = {
    # subcommand -> {flag: config key}; None marks an unsupported override
    "fit": {"lam": "lambda", "k": None, "seed": "seed", "out": "out"},
    "detect": {"lam": None, "k": "k", "seed": None, "out": "out"},
    "simulate": {"lam": ("estimator", "lambda"), "k": "k", "seed": "seed", "out": "out"},
    "bench": {"lam": ("baseline", "lambda"), "k": None, "seed": "seed", "out": "out"},
    "tune": {"lam": "lambda_grid", "k": "k", "seed": "seed", "out": "out"},
}


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    targets = _OVERRIDE_TARGETS[args.command]
    for flag in ("lam", "k", "seed", "out"):
        value = getattr(args, flag)
        if value is None:
            continue
        target = targets[flag]
        if target is None:
            raise CliError(
                f"--{'lambda' if flag == 'lam' else flag} does not apply to "
                f"'{args.command}'"
            )
        if target == "lambda_grid":
            cfg["lambda_grid"] = [value]
        elif isinstance(target, tuple):
            cfg.setdefault(target[0], {})[target[1]] = value
        else:
            cfg[target] = value
    return cfg


def _resolve_threads(args) -> int:
    if args.threads is not None:
        threads = args.threads
    else:
        env = os.environ.get("SSMRCD_THREADS", "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise CliError(
                    f"SSMRCD_THREADS must be an integer, got {env!r}"
                ) from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise CliError(f"thread count must be positive, got {threads}")
    return threads


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_json(args.config)
        if not isinstance(cfg, dict):
            raise CliError(f"{args.config} must contain a JSON object")
        cfg = _apply_overrides(cfg, args)
        threads = _resolve_threads(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "fit":
            return cmd_fit(cfg, threads=threads)
        if args.command == "detect":
            return cmd_detect(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_tune(cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
