"""Feature preprocessing: h-normalisation, z-scoring, PCA projection and whitening.

The fitted state is resolution specific and serialises to a small JSON file.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .packet import FEATURE_NAMES, N_FEATURES, PHI, DataPacket

SCHEMA_VERSION = 1
_FIELDS = ("version", "h", "m_iota", "means", "stds", "components", "explained_stds",
           "feature_order")


@dataclass(frozen=True)
class Preprocessor:
    h: float
    m_iota: int
    means: np.ndarray           # (28,)
    stds: np.ndarray            # (28,)
    components: np.ndarray      # (m_iota, 28), rows orthonormal
    explained_stds: np.ndarray  # (m_iota,)

    def check_h(self, h: float) -> None:
        if not math.isclose(h, self.h, rel_tol=1e-12):
            raise ValueError(f"preprocessor fitted for h={self.h}, got h={h}")

    def standardize(self, feats, h: float) -> np.ndarray:
        self.check_h(h)
        z = np.array(feats, dtype=float, ndmin=2)
        if z.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {z.shape[1]}")
        z[:, PHI] /= self.h
        return (z - self.means) / self.stds

    def transform(self, feats, h: float) -> np.ndarray:
        """(N, 28) raw features -> (N, m_iota) whitened principal coordinates."""
        return (self.standardize(feats, h) @ self.components.T) / self.explained_stds

    def transform_packet(self, p: DataPacket, h: float) -> np.ndarray:
        return self.transform(p.features(), h)[0]

    def discarded_energy(self, total_variance: float) -> float:
        return 1.0 - float(np.sum(self.explained_stds**2)) / total_variance


def fit(feats: np.ndarray, h: float, m_iota: int) -> Preprocessor:
    """Fit scaler and PCA on raw (N, 28) training features."""
    X = np.array(feats, dtype=float, ndmin=2)
    if X.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {X.shape[1]}")
    if len(X) <= N_FEATURES * 10:
        raise ValueError(f"need more than {N_FEATURES * 10} training rows, got {len(X)}")
    if not 1 <= m_iota <= N_FEATURES:
        raise ValueError("m_iota must lie in [1, 28]")
    X[:, PHI] /= h
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    flat = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
    if np.any(flat):
        names = ", ".join(FEATURE_NAMES[i] for i in np.flatnonzero(flat))
        raise ValueError(f"zero-variance feature(s): {names}")
    z = (X - means) / stds
    comps, explained = principal_components(z, m_iota)
    if np.any(explained <= 0):
        raise ValueError("training data is rank deficient for the requested m_iota")
    return Preprocessor(float(h), int(m_iota), means, stds, comps, explained)


def principal_components(z: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Leading ``k`` principal directions (rows) of centred-by-fit data and their stds."""
    cov = np.atleast_2d(np.cov(np.asarray(z, dtype=float), rowvar=False))
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:k]
    comps = evecs[:, order].T
    # Deterministic orientation: the largest-magnitude entry of each row is positive.
    lead = np.argmax(np.abs(comps), axis=1)
    comps = comps * np.sign(comps[np.arange(len(order)), lead])[:, None]
    return comps, np.sqrt(np.maximum(evals[order], 0.0))


def total_variance(pre: Preprocessor, feats: np.ndarray) -> float:
    z = pre.standardize(feats, pre.h)
    return float(np.trace(np.cov(z, rowvar=False)))


def to_dict(pre: Preprocessor) -> dict:
    return {"version": SCHEMA_VERSION, "h": pre.h, "m_iota": pre.m_iota,
            "means": pre.means.tolist(), "stds": pre.stds.tolist(),
            "components": pre.components.tolist(), "explained_stds": pre.explained_stds.tolist(),
            "feature_order": list(FEATURE_NAMES)}


def from_dict(d: dict) -> Preprocessor:
    missing = [k for k in _FIELDS if k not in d]
    if missing:
        raise ValueError(f"preprocessor schema: missing field(s) {', '.join(missing)}")
    if d["version"] != SCHEMA_VERSION:
        raise ValueError(f"preprocessor schema: unsupported version {d['version']}")
    if list(d["feature_order"]) != list(FEATURE_NAMES):
        raise ValueError("preprocessor schema: feature order differs from the canonical order")
    m = int(d["m_iota"])
    means, stds = np.array(d["means"], dtype=float), np.array(d["stds"], dtype=float)
    comps = np.array(d["components"], dtype=float)
    ex = np.array(d["explained_stds"], dtype=float)
    if means.shape != (N_FEATURES,) or stds.shape != (N_FEATURES,) \
            or comps.shape != (m, N_FEATURES) or ex.shape != (m,):
        raise ValueError("preprocessor schema: array shapes do not match m_iota")
    return Preprocessor(float(d["h"]), m, means, stds, comps, ex)


def save_json(pre: Preprocessor, path) -> None:
    # json writes floats with repr, so the round trip is exact.
    with open(path, "w") as fh:
        json.dump(to_dict(pre), fh)


def load_json(path) -> Preprocessor:
    with open(path) as fh:
        return from_dict(json.load(fh))
