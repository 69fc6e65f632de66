"""Hybrid curvature: numerical estimate with a gated neural correction.

For each interface node the numerical ``hk`` is interpolated at the node's
projection onto the interface.  Shallow curvatures keep that value.  Steeper
ones are mapped to standard form, corrected by the network on the packet and
its reflection, blended back towards the numerical value just above the gate,
and returned with the sign of the numerical estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import ScalarField, VectorField
from .neural import ErrorNet, batch_forward
from .packet import HK, collect_valid, interface_hk, negate_features, reflect_features, \
    reorient_features
from .preprocess import Preprocessor


@dataclass(frozen=True)
class HybridConfig:
    net: ErrorNet
    pre: Preprocessor
    hk_low: float = 0.004
    hk_up: float = 0.007

    def __post_init__(self):
        if not 0 < self.hk_low < self.hk_up:
            raise ValueError("need 0 < hk_low < hk_up")
        if self.net.m_iota != self.pre.m_iota:
            raise ValueError("network input size differs from the preprocessor output size")
        if self.net.h is not None:
            self.pre.check_h(self.net.h)


@dataclass
class HybridStats:
    nodes: int = 0
    gated: int = 0
    corrected: int = 0
    fallbacks: int = 0
    network_rows: int = 0


def correct_features(feats: np.ndarray, cfg: HybridConfig, h: float,
                     stats: HybridStats | None = None) -> np.ndarray:
    """Hybrid ``hk`` for raw (N, 28) packets whose last column is the numerical ``hk``."""
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    cfg.pre.check_h(h)
    hk = feats[:, HK].copy()
    mag = np.abs(hk)
    out = hk.copy()
    active = np.flatnonzero(mag >= cfg.hk_low)
    if stats is not None:
        stats.nodes += len(hk)
        stats.gated += len(hk) - len(active)
        stats.corrected += len(active)
    if len(active) == 0:
        return out
    f = feats[active]
    flip = hk[active] > 0
    f[flip] = negate_features(f[flip])
    f = reorient_features(f)
    both = np.concatenate([f, reflect_features(f)])
    pred = batch_forward(cfg.net, cfg.pre.transform(both, h), both[:, HK]).astype(float)
    if stats is not None:
        stats.network_rows += len(both)
    n = len(active)
    avg = 0.5 * (pred[:n] + pred[n:])
    m = mag[active]
    lam = np.where(m <= cfg.hk_up, (cfg.hk_up - m) / (cfg.hk_up - cfg.hk_low), 0.0)
    avg = (1.0 - lam) * avg + lam * (-m)
    out[active] = np.sign(hk[active]) * np.abs(avg)
    return out


def numerical_hk(field: ScalarField, nrm: VectorField, kappa: ScalarField, nodes) -> np.ndarray:
    hk, _ = interface_hk(field, nrm, kappa, nodes)
    return hk


def ml_curvature_batch(nodes, cfg: HybridConfig, field: ScalarField, nrm: VectorField,
                       kappa: ScalarField, stats: HybridStats | None = None) -> np.ndarray:
    """Hybrid ``hk`` at each node; nodes without a usable packet keep the numerical value."""
    nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
    cfg.pre.check_h(field.h)
    hk = numerical_hk(field, nrm, kappa, nodes)
    out = hk.copy()
    need = np.flatnonzero(np.abs(hk) >= cfg.hk_low)
    if stats is not None:
        stats.nodes += len(nodes)
        stats.gated += len(nodes) - len(need)
    if len(need) == 0:
        return out
    # Nodes are taken in sorted order to map packets back to their positions.
    order = np.argsort(nodes[need], kind="stable")
    cand = nodes[need][order]
    feats, kept = collect_valid(field, nrm, kappa, cand)
    at = need[order][np.isin(cand, kept)]
    if stats is not None:
        stats.fallbacks += len(need) - len(at)
        stats.corrected += len(at)
    sub = HybridStats()
    out[at] = correct_features(feats, cfg, field.h, sub)
    if stats is not None:
        stats.network_rows += sub.network_rows
    return out


def ml_curvature(node: int, cfg: HybridConfig, field: ScalarField, nrm: VectorField,
                 kappa: ScalarField, stats: HybridStats | None = None) -> float:
    return float(ml_curvature_batch([node], cfg, field, nrm, kappa, stats)[0])
