"""Data packets: the 28 stencil features fed to the error model.

Flat feature order (the contract for CSV files, scaler and PCA):
``phi_*`` for the nine stencil labels, then ``nx_*``, then ``ny_*``, then
``hk``.  Stencil labels follow ``field.STENCIL_LABELS``.

All transformations have a vectorised form over (N, 28) feature arrays; the
``DataPacket`` methods are thin wrappers around them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import (STENCIL_LABELS, STENCIL_OFFSETS, ZZ, ScalarField, VectorField,
                    interpolate_many)

N_FEATURES = 28
FEATURE_NAMES = tuple(
    [f"phi_{s}" for s in STENCIL_LABELS]
    + [f"nx_{s}" for s in STENCIL_LABELS]
    + [f"ny_{s}" for s in STENCIL_LABELS]
    + ["hk"]
)
PHI = slice(0, 9)
NX = slice(9, 18)
NY = slice(18, 27)
HK = 27


def _stencil_index(i: int, j: int) -> int:
    return (j + 1) * 3 + (i + 1)


def _permutation(mapping) -> np.ndarray:
    """Source index for each destination when node q moves to mapping(q)."""
    perm = np.empty(9, dtype=np.int64)
    for src, (i, j) in enumerate(STENCIL_OFFSETS):
        perm[_stencil_index(*mapping(int(i), int(j)))] = src
    return perm


# Quarter-turn counts: +1 is a rotation by +pi/2, i.e. (x, y) -> (-y, x).
_ROTATIONS = {
    0: (lambda i, j: (i, j)),
    1: (lambda i, j: (-j, i)),
    -1: (lambda i, j: (j, -i)),
    2: (lambda i, j: (-i, -j)),
}
_ROT_PERM = {k: _permutation(m) for k, m in _ROTATIONS.items()}
_TRANSPOSE = _permutation(lambda i, j: (j, i))
# Search order: smallest |k| first, positive angle on ties.
_SEARCH = (0, 1, -1, 2)


@dataclass(frozen=True)
class DataPacket:
    phi: np.ndarray      # (9,)
    normal: np.ndarray   # (9, 2)
    hk: float

    @classmethod
    def from_features(cls, f) -> "DataPacket":
        f = np.asarray(f, dtype=float)
        return cls(f[PHI].copy(), np.stack([f[NX], f[NY]], axis=1), float(f[HK]))

    def features(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        return np.concatenate([self.phi, n[:, 0], n[:, 1], [self.hk]])

    def negate(self) -> "DataPacket":
        return negate(self)

    def reorient(self) -> "DataPacket":
        return reorient(self)

    def reflect(self) -> "DataPacket":
        return reflect(self)


@dataclass(frozen=True)
class Sample:
    packet: DataPacket
    target: float


def negate_features(feats: np.ndarray) -> np.ndarray:
    return -np.asarray(feats, dtype=float)


def rotate_features(feats: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Rotate each row's stencil by k[row] quarter turns."""
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    k = np.broadcast_to(np.asarray(k), (len(feats),))
    out = feats.copy()
    for kk, perm in _ROT_PERM.items():
        rows = np.flatnonzero(k == kk)
        if kk == 0 or len(rows) == 0:
            continue
        f = feats[rows]
        phi, nx, ny = f[:, PHI][:, perm], f[:, NX][:, perm], f[:, NY][:, perm]
        if kk == 1:
            nx, ny = -ny, nx
        elif kk == -1:
            nx, ny = ny, -nx
        else:
            nx, ny = -nx, -ny
        out[rows, PHI], out[rows, NX], out[rows, NY] = phi, nx, ny
    return out


def orientation_turns(nx: np.ndarray, ny: np.ndarray) -> np.ndarray:
    """Quarter turns that bring (nx, ny) into the closed first quadrant."""
    nx, ny = np.asarray(nx, dtype=float), np.asarray(ny, dtype=float)
    k = np.full(nx.shape, 2, dtype=np.int64)
    rotated = {0: (nx, ny), 1: (-ny, nx), -1: (ny, -nx)}
    for kk in reversed(_SEARCH[:-1]):
        x, y = rotated[kk]
        k = np.where((x >= 0) & (y >= 0), kk, k)
    return k


def reorient_features(feats: np.ndarray) -> np.ndarray:
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    k = orientation_turns(feats[:, 9 + ZZ], feats[:, 18 + ZZ])
    return rotate_features(feats, k)


def reflect_features(feats: np.ndarray) -> np.ndarray:
    """Mirror about the diagonal through the node: transpose, swap components."""
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    out = feats.copy()
    out[:, PHI] = feats[:, PHI][:, _TRANSPOSE]
    out[:, NX] = feats[:, NY][:, _TRANSPOSE]
    out[:, NY] = feats[:, NX][:, _TRANSPOSE]
    return out


def negate(p: DataPacket) -> DataPacket:
    return DataPacket.from_features(negate_features(p.features()))


def reorient(p: DataPacket) -> DataPacket:
    return DataPacket.from_features(reorient_features(p.features())[0])


def reflect(p: DataPacket) -> DataPacket:
    return DataPacket.from_features(reflect_features(p.features())[0])


def interface_hk(field: ScalarField, nrm: VectorField, kappa: ScalarField,
                 nodes) -> tuple[np.ndarray, np.ndarray]:
    """Numerical h*kappa interpolated at each node's projection onto the interface.

    Returns ``(hk, x_gamma)``.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    n = nrm.values[nodes]
    if np.any(nrm.degenerate[nodes]) or not np.all(np.isfinite(n)):
        raise ValueError("degenerate normal at requested node")
    x_gamma = field.positions[nodes] - field.values[nodes, None] * n
    return field.h * interpolate_many(kappa, x_gamma), x_gamma


def collect_features(field: ScalarField, nrm: VectorField, kappa: ScalarField,
                     nodes, hk=None) -> np.ndarray:
    """(N, 28) raw features for the given node rows."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if not np.all(field.complete[nodes]):
        raise ValueError("incomplete stencil at requested node")
    nb = field.neighbors[nodes]
    nvec = nrm.values[nb]
    if not np.all(np.isfinite(nvec)) or np.any(nrm.degenerate[nodes]):
        raise ValueError("degenerate normal in requested stencil")
    if hk is None:
        hk, _ = interface_hk(field, nrm, kappa, nodes)
    out = np.empty((len(nodes), N_FEATURES))
    out[:, PHI] = field.values[nb]
    out[:, NX] = nvec[..., 0]
    out[:, NY] = nvec[..., 1]
    out[:, HK] = hk
    return out


def collect_valid(field: ScalarField, nrm: VectorField, kappa: ScalarField,
                  nodes) -> tuple[np.ndarray, np.ndarray]:
    """Features for the usable subset of ``nodes``.

    A node is usable when its stencil is complete, every stencil normal is
    non-degenerate and the curvature can be interpolated at its projection.
    Returns ``(features, kept_nodes)``.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    ok = field.complete[nodes].copy()
    nb = np.where(field.neighbors[nodes] >= 0, field.neighbors[nodes], 0)
    ok &= ~np.any(nrm.degenerate[nb], axis=1)
    ok &= np.all(np.isfinite(nrm.values[nb]), axis=(1, 2))
    nodes = nodes[ok]
    x_gamma = field.positions[nodes] - field.values[nodes, None] * nrm.values[nodes]
    hk = field.h * interpolate_many(kappa, x_gamma, strict=False)
    good = np.isfinite(hk)
    nodes = nodes[good]
    return collect_features(field, nrm, kappa, nodes, hk=hk[good]), nodes


def collect(field: ScalarField, nrm: VectorField, kappa: ScalarField, node: int) -> DataPacket:
    return DataPacket.from_features(collect_features(field, nrm, kappa, [node])[0])
