"""Training-data generation from circles and sine waves, balancing and splitting.

A dataset stores the flat (N, 28) feature matrix and the (N,) target column.
Targets are dimensionless curvatures ``h*kappa`` in standard form (negative).
Per-sample provenance (source kind and work-item index) is kept alongside and
written to the manifest, not the CSV.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import field as fld
from .geometry import CircleShape, SineShape, nearest_parameter
from .packet import FEATURE_NAMES, HK, N_FEATURES, collect_valid, reflect_features, \
    reorient_features

log = logging.getLogger(__name__)

CIRCLE, SINE = 0, 1
KIND_NAMES = {CIRCLE: "circle", SINE: "sine"}
CSV_HEADER = tuple(FEATURE_NAMES) + ("target",)
BAND_HALF_WIDTH = 8.0
EASE_MIN_PR = 0.01


@dataclass(frozen=True)
class GenConfig:
    eta: int
    hk_min_star: float = 0.004
    hk_max_star: float = 2.0 / 3.0
    cph: int = 2
    sph2: int = 5
    keep_every_x: int = 4
    nu: int = 10
    na: int = 34
    nt: int = 38
    ease_mid_max_pr: float = 0.4
    rng_seed: int = 0
    scale: float = 1.0
    max_draws: int = 50

    def __post_init__(self):
        if not (0 < self.hk_min_star < self.hk_max_star <= 2.0 / 3.0):
            raise ValueError("need 0 < hk_min_star < hk_max_star <= 2/3")
        if self.eta < 1:
            raise ValueError("eta must be >= 1")
        if min(self.cph, self.sph2, self.keep_every_x, self.na, self.nt, self.max_draws) < 1:
            raise ValueError("counts must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not 0 < self.ease_mid_max_pr <= 1:
            raise ValueError("ease_mid_max_pr must lie in (0, 1]")

    @property
    def h(self) -> float:
        return math.ldexp(1.0, -self.eta)

    @property
    def sph2_eff(self) -> float:
        return self.sph2 * self.scale

    @property
    def na_eff(self) -> int:
        return max(1, round(self.na * self.scale))

    @property
    def nt_eff(self) -> int:
        return max(1, round(self.nt * self.scale))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    eta: int
    source: Optional[np.ndarray] = None
    shape_id: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, N_FEATURES)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(self.X) != len(self.y):
            raise ValueError("feature and target counts differ")
        n = len(self.y)
        self.source = (np.full(n, -1, dtype=np.int64) if self.source is None
                       else np.asarray(self.source, dtype=np.int64))
        self.shape_id = (np.full(n, -1, dtype=np.int64) if self.shape_id is None
                         else np.asarray(self.shape_id, dtype=np.int64))

    def __len__(self):
        return len(self.y)

    @property
    def h(self) -> float:
        return math.ldexp(1.0, -self.eta)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.eta, self.source[rows],
                       self.shape_id[rows], dict(self.meta))

    def samples(self):
        from .packet import DataPacket, Sample
        for x, t in zip(self.X, self.y):
            yield Sample(DataPacket.from_features(x), float(t))

    def digest(self) -> str:
        """SHA-256 over features and targets (provenance excluded)."""
        m = hashlib.sha256()
        m.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        m.update(np.ascontiguousarray(self.y, dtype="<f8").tobytes())
        return m.hexdigest()


def concat(parts: list[Dataset]) -> Dataset:
    if not parts:
        raise ValueError("nothing to concatenate")
    etas = {p.eta for p in parts}
    if len(etas) != 1:
        raise ValueError("datasets come from different resolutions")
    return Dataset(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   parts[0].eta, np.concatenate([p.source for p in parts]),
                   np.concatenate([p.shape_id for p in parts]))


def sub_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream per work item, independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def ease_off(p_min: float, p_max: float, q) -> np.ndarray:
    """Smoothstep ramp from ``p_min`` at q=0 to ``p_max`` at q>=1."""
    q = np.clip(np.asarray(q, dtype=float), 0.0, 1.0)
    return p_min + (p_max - p_min) * q * q * (3.0 - 2.0 * q)


def standard_form(feats: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Negate rows with positive target, reorient, and append reflected twins.

    Each input row yields two consecutive output rows: the reoriented packet
    and its reflection.
    """
    flip = np.where(targets > 0, -1.0, 1.0)
    f = reorient_features(feats * flip[:, None])
    t = targets * flip
    out = np.empty((2 * len(f), N_FEATURES))
    out[0::2] = f
    out[1::2] = reflect_features(f)
    return out, np.repeat(t, 2)


def _numerics(shape, cfg: GenConfig, region):
    grid = fld.Grid(cfg.eta, band_half_width=BAND_HALF_WIDTH)
    phi = fld.evaluate(grid, shape, region, distance=shape.distance_estimate)
    phi = fld.reinitialize(phi, cfg.nu)
    return phi, fld.normals(phi), fld.curvature(phi)


# ---------------------------------------------------------------- circles

def circle_plan(cfg: GenConfig) -> dict:
    """Radii, target curvatures and per-radius quotas."""
    h = cfg.h
    k_min, k_max = cfg.hk_min_star / h, cfg.hk_max_star / h
    r_min, r_max = 1.0 / k_max, 1.0 / k_min
    # Guard the ceiling against round-off in an exact integer ratio.
    nc = math.ceil(cfg.cph * ((r_max - r_min) / h + 1.0) - 1e-9)
    r_bar = 0.5 * (r_min + r_max)
    avg_spr = math.ceil(cfg.sph2_eff * math.pi / h**2 * (r_bar**2 - (r_bar - h) ** 2) - 1e-9) \
        / cfg.keep_every_x
    spr = np.linspace(0.75 * avg_spr, 1.25 * avg_spr, nc)
    tgt_k = np.linspace(k_max, k_min, nc)
    return {"h": h, "r_min": r_min, "r_max": r_max, "nc": nc, "avg_spr": avg_spr,
            "spr": spr, "tgt_k": tgt_k}


def _circle_item(cfg: GenConfig, c: int, kappa: float, spr: float):
    h = cfg.h
    r = 1.0 / kappa
    quota = math.ceil(2.0 * spr - 1e-9)
    feats, targets, draws = [], [], 0
    collected = 0
    while collected < quota and draws < cfg.max_draws:
        rng = sub_rng(cfg.rng_seed, CIRCLE, c, draws)
        draws += 1
        center = tuple(rng.uniform(-h / 2, h / 2, 2))
        shape = CircleShape(center, r)
        half = r + 4 * h
        region = (center[0] - half, center[1] - half, center[0] + half, center[1] + half)
        phi, nrm, kap = _numerics(shape, cfg, region)
        nodes = fld.interface_nodes(phi)
        nodes = nodes[rng.random(len(nodes)) < 1.0 / cfg.keep_every_x]
        f, _ = collect_valid(phi, nrm, kap, nodes)
        f, t = standard_form(f, np.full(len(f), h * kappa))
        feats.append(f)
        targets.append(t)
        collected += len(t)
    X = np.concatenate(feats) if feats else np.empty((0, N_FEATURES))
    y = np.concatenate(targets) if targets else np.empty(0)
    if len(y) > quota:
        # Draw keys stop below max_draws, so this stream is never reused.
        rng = sub_rng(cfg.rng_seed, CIRCLE, c, cfg.max_draws)
        keep = np.sort(rng.choice(len(y), quota, replace=False))
        X, y = X[keep], y[keep]
    return X, y, draws, quota


def generate_circles(cfg: GenConfig, workers: Optional[int] = None) -> Dataset:
    plan = circle_plan(cfg)
    items = [(cfg, c, float(k), float(s)) for c, (k, s) in enumerate(zip(plan["tgt_k"], plan["spr"]))]
    results = _run(_circle_item, items, workers)
    capped = [c for c, (_, y, draws, quota) in enumerate(results) if len(y) < quota]
    if capped:
        warnings.warn(f"{len(capped)} radii hit the {cfg.max_draws}-draw cap before filling "
                      f"their quota", RuntimeWarning, stacklevel=2)
    X = np.concatenate([r[0] for r in results])
    y = np.concatenate([r[1] for r in results])
    ids = np.concatenate([np.full(len(r[1]), c) for c, r in enumerate(results)])
    meta = {"kind": "circle", "config": asdict(cfg), "nc": plan["nc"], "avg_spr": plan["avg_spr"],
            "r_min": plan["r_min"], "r_max": plan["r_max"],
            "shapes": [{"id": c, "radius": 1.0 / it[2], "quota": r[3], "draws": r[2],
                        "samples": int(len(r[1]))} for c, (it, r) in enumerate(zip(items, results))],
            "capped": capped}
    return Dataset(X, y, cfg.eta, np.full(len(y), CIRCLE), ids, meta)


# ---------------------------------------------------------------- sines

def sine_plan(cfg: GenConfig) -> list[dict]:
    """Amplitude/frequency pairs, each with its tilts, in generation order."""
    h = cfg.h
    k_min, k_max = cfg.hk_min_star / h, cfg.hk_max_star / h
    hk_low, hk_up = 0.5 * cfg.hk_max_star, cfg.hk_max_star
    plan = []
    tilts = np.linspace(-math.pi / 2, math.pi / 2, cfg.nt_eff + 1)[:-1]
    for ia, a in enumerate(np.linspace(4.0 / k_max, 1.0 / k_min, cfg.na_eff)):
        w_min, w_max = math.sqrt(hk_low / (h * a)), math.sqrt(hk_up / (h * a))
        w_d = 0.5 * math.pi * (1.0 / w_min - 1.0 / w_max)
        nf = math.ceil(w_d / h - 1e-9) + 1
        for iw, w in enumerate(np.linspace(w_min, w_max, nf)):
            plan.append({"ia": ia, "iw": iw, "amplitude": float(a), "frequency": float(w),
                         "tilts": tilts})
    return plan


def _sine_item(cfg: GenConfig, idx: int, amplitude: float, frequency: float, tilts):
    h = cfg.h
    r_sam = 2.0 / (cfg.hk_min_star / h)
    hk_bar = 0.5 * (0.5 * cfg.hk_max_star + cfg.hk_max_star)
    feats, targets = [], []
    for it, theta in enumerate(tilts):
        rng = sub_rng(cfg.rng_seed, SINE, idx, it)
        shift = tuple(rng.uniform(-h / 2, h / 2, 2))
        shape = SineShape(amplitude, frequency, shift, float(theta))
        half = r_sam + 4 * h
        region = (shift[0] - half, shift[1] - half, shift[0] + half, shift[1] + half)
        phi, nrm, kap = _numerics(shape, cfg, region)
        nodes = fld.interface_nodes(phi)
        xy = phi.positions[nodes]
        nodes = nodes[np.sum((xy - shift) ** 2, axis=1) <= r_sam**2]
        u, v = shape.to_canonical(*phi.positions[nodes].T)
        t_star = nearest_parameter(amplitude, frequency, u, v)
        hk_star = h * shape.curvature_at(t_star)
        keep = np.abs(hk_star) >= cfg.hk_min_star
        nodes, hk_star = nodes[keep], hk_star[keep]
        q = np.minimum(1.0, (np.abs(hk_star) - cfg.hk_min_star) / (hk_bar - cfg.hk_min_star))
        accept = rng.random(len(nodes)) <= ease_off(EASE_MIN_PR, cfg.ease_mid_max_pr, q)
        nodes, hk_star = nodes[accept], hk_star[accept]
        f, kept = collect_valid(phi, nrm, kap, nodes)
        hk_star = hk_star[np.searchsorted(nodes, kept)]
        f, t = standard_form(f, hk_star)
        feats.append(f)
        targets.append(t)
    X = np.concatenate(feats) if feats else np.empty((0, N_FEATURES))
    y = np.concatenate(targets) if targets else np.empty(0)
    return X, y


def generate_sines(cfg: GenConfig, workers: Optional[int] = None) -> Dataset:
    plan = sine_plan(cfg)
    items = [(cfg, i, p["amplitude"], p["frequency"], p["tilts"]) for i, p in enumerate(plan)]
    results = _run(_sine_item, items, workers)
    X = np.concatenate([r[0] for r in results])
    y = np.concatenate([r[1] for r in results])
    ids = np.concatenate([np.full(len(r[1]), i) for i, r in enumerate(results)])
    meta = {"kind": "sine", "config": asdict(cfg), "na": cfg.na_eff, "nt": cfg.nt_eff,
            "shapes": [{"id": i, "amplitude": p["amplitude"], "frequency": p["frequency"],
                        "tilts": len(p["tilts"]), "samples": int(len(r[1]))}
                       for i, (p, r) in enumerate(zip(plan, results))]}
    return Dataset(X, y, cfg.eta, np.full(len(y), SINE), ids, meta)


def _star(args):
    fn, item = args
    return fn(*item)


def worker_count(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get("CURVEX_THREADS", "1") or 1)
    return max(1, workers)


def _run(fn, items, workers):
    """Map work items, optionally over processes; results keep item order."""
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_star, [(fn, it) for it in items], chunksize=1))


# ---------------------------------------------------------------- balancing

def histogram(y: np.ndarray, bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bin counts over the target range and each sample's bin."""
    lo, hi = float(np.min(y)), float(np.max(y))
    if hi == lo:
        return np.array([len(y)]), np.zeros(len(y), dtype=np.int64)
    which = np.minimum(((y - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    return np.bincount(which, minlength=bins), which


def balance_histogram(ds: Dataset, bins: int = 100, seed: int = 0,
                      median: Optional[float] = None) -> Dataset:
    """Randomly thin every bin to at most two thirds of the reference median.

    The reference is the median count of the non-empty bins of the input
    histogram unless ``median`` is given.  One pass suffices because the cap
    is fixed, and rows keep their input order.
    """
    if len(ds) == 0:
        raise ValueError("cannot balance an empty dataset")
    counts, which = histogram(ds.y, bins)
    m = float(np.median(counts[counts > 0])) if median is None else float(median)
    cap = int(math.floor(2.0 / 3.0 * m))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    keep = np.ones(len(ds), dtype=bool)
    for b in np.flatnonzero(counts > cap):
        rows = np.flatnonzero(which == b)
        drop = rng.choice(rows, len(rows) - cap, replace=False)
        keep[drop] = False
    out = ds.subset(np.flatnonzero(keep))
    out.meta = dict(ds.meta, balance={"bins": bins, "median": m, "cap": cap,
                                      "removed": int(len(ds) - keep.sum())})
    return out


# ---------------------------------------------------------------- splitting

def stratify_classes(y: np.ndarray, n_classes: int = 100, min_size: int = 10) -> np.ndarray:
    """Target-quantile class labels; classes below ``min_size`` merge with a neighbour."""
    edges = np.unique(np.quantile(y, np.linspace(0, 1, n_classes + 1)[1:-1]))
    labels = np.searchsorted(edges, y, side="right")
    sizes = np.bincount(labels, minlength=len(edges) + 1)
    # Merge left to right: a small class joins the next one, the last joins the previous.
    groups = np.arange(len(sizes))
    acc, start = 0, 0
    for c in range(len(sizes)):
        groups[c] = start
        acc += sizes[c]
        if acc >= min_size:
            acc, start = 0, c + 1
    if acc and start > 0:
        groups[groups == start] = groups[start - 1]
    _, dense = np.unique(groups[labels], return_inverse=True)
    return dense


def stratified_split(ds: Dataset, seed: int = 0, fractions=(0.7, 0.1, 0.1),
                     n_classes: int = 100) -> tuple[Dataset, Dataset, Dataset]:
    """Proportional per-class train/test/valid allocation; the rest is discarded."""
    if len(ds) < 1000:
        raise ValueError("stratified split needs at least 1000 samples")
    labels = stratify_classes(ds.y, n_classes)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    parts = ([], [], [])
    for c in range(labels.max() + 1):
        rows = rng.permutation(np.flatnonzero(labels == c))
        n = len(rows)
        sizes = [int(math.floor(f * n + 0.5)) for f in fractions]
        if sum(sizes) > n:
            sizes[0] = n - sizes[1] - sizes[2]
        start = 0
        for part, k in zip(parts, sizes):
            part.append(rows[start:start + k])
            start += k
    return tuple(ds.subset(np.sort(np.concatenate(p))) for p in parts)


# ---------------------------------------------------------------- persistence

def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for x, t in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t))])


def read_csv(path, eta: int) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: header does not match the canonical feature order")
        rows = []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{line}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(CSV_HEADER))
    return Dataset(data[:, :N_FEATURES], data[:, N_FEATURES], eta)


def manifest(ds: Dataset) -> dict:
    counts, _ = histogram(ds.y) if len(ds) else (np.zeros(0, dtype=int), None)
    return {"eta": ds.eta, "h": ds.h, "n_samples": len(ds), "sha256": ds.digest(),
            "target_min": float(ds.y.min()) if len(ds) else None,
            "target_max": float(ds.y.max()) if len(ds) else None,
            "histogram": counts.tolist(),
            "per_source": {KIND_NAMES.get(int(k), "unknown"): int(np.sum(ds.source == k))
                           for k in np.unique(ds.source)},
            **_json_safe(ds.meta)}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_manifest(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest(ds), fh, indent=1, sort_keys=True)


def hk_column(ds: Dataset) -> np.ndarray:
    return ds.X[:, HK]


def with_scale(cfg: GenConfig, scale: float) -> GenConfig:
    return replace(cfg, scale=scale)
