"""Evaluation on polar-rose interfaces: error reports, correlation data, convergence tables."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import field as fld
from .geometry import RoseShape, rose_target_curvature
from .hybrid import HybridConfig, HybridStats, correct_features
from .packet import collect_valid

METHODS = ("baseline_nu10", "baseline_nu20", "hybrid")
REPORT_SCHEMA = {
    "type": "object",
    "required": ["method", "eta", "mae", "maxae", "rmse", "n_nodes", "wall_time", "regression"],
    "properties": {
        "method": {"enum": list(METHODS)},
        "eta": {"type": "integer"},
        "mae": {"type": "number"}, "maxae": {"type": "number"}, "rmse": {"type": "number"},
        "n_nodes": {"type": "integer"},
        "wall_time": {"type": "number"},
        "regression": {"type": "object", "required": ["slope", "intercept", "pearson"]},
    },
}
TIMING_REPEATS = 10
BAND_HALF_WIDTH = 8.0


@dataclass
class EvalReport:
    method: str
    eta: int
    mae: float
    maxae: float
    rmse: float
    n_nodes: int
    wall_time: float
    regression: dict

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_nodes > 0 and not (self.maxae >= self.mae and self.rmse >= self.mae):
            raise ValueError("inconsistent error summary")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoseCase:
    """Reinitialized rose field with its usable interface nodes and true ``hk``."""
    shape: RoseShape
    eta: int
    nu: int
    phi: fld.ScalarField
    nodes: np.ndarray
    x_gamma: np.ndarray
    target: np.ndarray


def error_summary(pred, target) -> tuple[float, float, float]:
    err = np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    if len(err) == 0:
        return math.nan, math.nan, math.nan
    return float(err.mean()), float(err.max()), float(np.sqrt(np.mean(err * err)))


def regression(pred, target) -> dict:
    """Least-squares line of ``pred`` against ``target`` and Pearson correlation."""
    x, y = np.asarray(target, dtype=float), np.asarray(pred, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        return {"slope": math.nan, "intercept": math.nan, "pearson": math.nan}
    slope, intercept = np.polyfit(x, y, 1)
    rho = np.corrcoef(x, y)[0, 1] if np.ptp(y) > 0 else math.nan
    return {"slope": float(slope), "intercept": float(intercept), "pearson": float(rho)}


def rose_case(shape: RoseShape, eta: int, nu: int) -> RoseCase:
    grid = fld.Grid(eta, band_half_width=BAND_HALF_WIDTH)
    r = shape.a + shape.b + (BAND_HALF_WIDTH + 2.0) * grid.h
    phi = fld.evaluate(grid, shape, (-r, -r, r, r), distance=shape.distance_estimate)
    phi = fld.reinitialize(phi, nu)
    nrm, kap = fld.normals(phi), fld.curvature(phi)
    _, nodes = collect_valid(phi, nrm, kap, fld.interface_nodes(phi))
    x_gamma = phi.positions[nodes] - phi.values[nodes, None] * nrm.values[nodes]
    target = grid.h * np.asarray(rose_target_curvature(shape, x_gamma), dtype=float)
    return RoseCase(shape, eta, nu, phi, nodes, x_gamma, target)


def curvature_pass(case: RoseCase, cfg: Optional[HybridConfig] = None,
                   stats: Optional[HybridStats] = None) -> np.ndarray:
    """Normals, curvature and interpolated ``hk`` (plus the correction when ``cfg`` is given)."""
    phi = case.phi
    nrm, kap = fld.normals(phi), fld.curvature(phi)
    feats, kept = collect_valid(phi, nrm, kap, case.nodes)
    if len(kept) != len(case.nodes):
        raise ValueError("interface node set changed between passes")
    if cfg is None:
        return feats[:, -1].copy()
    return correct_features(feats, cfg, phi.h, stats)


def timed(fn, repeats: int = TIMING_REPEATS):
    """Result of ``fn()`` and the shortest wall time over ``repeats`` calls."""
    best, out = math.inf, None
    for _ in range(max(1, repeats)):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


def make_report(method: str, case: RoseCase, pred, wall_time: float) -> EvalReport:
    mae, maxae, rmse = error_summary(pred, case.target)
    return EvalReport(method, case.eta, mae, maxae, rmse, len(case.nodes), wall_time,
                      regression(pred, case.target))


def eval_rose(shape: RoseShape, eta: int, cfg: Optional[HybridConfig] = None, nu: int = 10,
              baseline_nus=(10, 20), repeats: int = TIMING_REPEATS):
    """Reports for the numerical baselines and (if ``cfg``) the hybrid at ``nu`` steps.

    Returns ``(reports, correlation_rows)``; the rows hold x, y, true ``hk``,
    baseline ``hk`` and hybrid ``hk`` for every node of the ``nu`` field.
    """
    reports = []
    main = None
    base_main = None
    for n in baseline_nus:
        case = rose_case(shape, eta, n)
        pred, wall = timed(lambda: curvature_pass(case), repeats)
        reports.append(make_report(f"baseline_nu{n}", case, pred, wall))
        if n == nu:
            main, base_main = case, pred
    if main is None:
        main = rose_case(shape, eta, nu)
        base_main = curvature_pass(main)
    hyb = None
    if cfg is not None:
        hyb, wall = timed(lambda: curvature_pass(main, cfg), repeats)
        reports.append(make_report("hybrid", main, hyb, wall))
    rows = np.column_stack([main.x_gamma, main.target, base_main,
                            hyb if hyb is not None else np.full(len(main.nodes), np.nan)])
    return reports, rows


def write_reports(reports, path) -> None:
    with open(path, "w") as fh:
        json.dump({"reports": [r.to_dict() for r in reports]}, fh, indent=2)


def write_correlation(rows: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_gamma", "y_gamma", "true_hk", "baseline_hk", "hybrid_hk"])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def convergence(shape: RoseShape, etas, models: dict, nu: int = 10) -> list[dict]:
    """Per-level curvature errors (in units of 1/length) and log2 ratios between levels.

    ``models`` maps eta to a HybridConfig; missing levels get NaN hybrid columns.
    """
    rows = []
    for eta in sorted(int(e) for e in etas):
        case = rose_case(shape, eta, nu)
        h = case.phi.h
        row = {"eta": eta, "h": h, "n_nodes": len(case.nodes)}
        base = curvature_pass(case)
        row["baseline_mae"], row["baseline_maxae"], _ = (v / h for v in error_summary(base, case.target))
        cfg = models.get(eta)
        if cfg is not None:
            hyb = curvature_pass(case, cfg)
            row["hybrid_mae"], row["hybrid_maxae"], _ = (v / h for v in error_summary(hyb, case.target))
        else:
            row["hybrid_mae"] = row["hybrid_maxae"] = math.nan
        rows.append(row)
    for prev, row in zip([None] + rows[:-1], rows):
        for key in ("baseline_mae", "baseline_maxae", "hybrid_mae", "hybrid_maxae"):
            order = math.nan
            if prev is not None and prev[key] > 0 and row[key] > 0:
                order = math.log2(prev[key] / row[key]) / (row["eta"] - prev["eta"])
            row[key.replace("_ma", "_order_ma")] = order
    return rows


CONVERGENCE_COLUMNS = ("eta", "h", "n_nodes", "baseline_mae", "baseline_order_mae",
                       "baseline_maxae", "baseline_order_maxae", "hybrid_mae", "hybrid_order_mae",
                       "hybrid_maxae", "hybrid_order_maxae")


def write_convergence(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CONVERGENCE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                        for k in CONVERGENCE_COLUMNS})
