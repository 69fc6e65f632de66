"""Narrow-band level-set fields on a uniform Cartesian lattice.

A field only stores the lattice nodes that lie within a band around the
interface.  Each node keeps the indices of its 3x3 neighbourhood, so every
finite-difference operator below is a gather over that table.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

GRADIENT_GUARD = 1e-8

# Canonical 3x3 stencil order: (i, j) offsets with j as the slow index.
# Labels read "ij" with m=-1, 0=0, p=+1.
STENCIL_LABELS = ("mm", "0m", "pm", "m0", "00", "p0", "mp", "0p", "pp")
STENCIL_OFFSETS = np.array([(i, j) for j in (-1, 0, 1) for i in (-1, 0, 1)], dtype=np.int64)
MM, ZM, PM, MZ, ZZ, PZ, MP, ZP, PP = range(9)

LevelSet = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Grid:
    """Uniform lattice with spacing ``h = 2**-eta``.

    ``band_half_width`` is measured in multiples of ``h``.
    """

    eta: int
    origin: tuple[float, float] = (0.0, 0.0)
    band_half_width: float = 8.0

    def __post_init__(self):
        if int(self.eta) != self.eta or self.eta < 1:
            raise ValueError(f"eta must be a positive integer, got {self.eta!r}")
        if self.band_half_width < 4.0 * math.sqrt(2.0):
            raise ValueError("band_half_width must be at least 4*sqrt(2) (in units of h)")

    @property
    def h(self) -> float:
        return math.ldexp(1.0, -int(self.eta))

    def positions(self, ij: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin, dtype=float) + np.asarray(ij, dtype=float) * self.h


class ScalarField:
    """Nodal values on a set of lattice nodes.

    ``neighbors[n, k]`` is the row of the k-th stencil neighbour of node n
    (canonical order, see ``STENCIL_LABELS``) or -1 when it is absent.
    Instances are treated as immutable snapshots.
    """

    def __init__(self, grid: Grid, ij, values, neighbors=None, degenerate=None):
        self.grid = grid
        self.ij = np.asarray(ij, dtype=np.int64).reshape(-1, 2)
        self.values = np.asarray(values, dtype=float).reshape(-1)
        if len(self.values) != len(self.ij):
            raise ValueError("values and lattice coordinates differ in length")
        if neighbors is None:
            neighbors = _neighbor_table(self.ij)
        self.neighbors = neighbors
        self.complete = np.all(neighbors >= 0, axis=1)
        if degenerate is None:
            degenerate = np.zeros(len(self.values), dtype=bool)
        self.degenerate = degenerate
        for arr in (self.ij, self.values, self.neighbors, self.complete, self.degenerate):
            arr.flags.writeable = False
        self._lookup = None

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_function(cls, grid: Grid, levelset: LevelSet, ij) -> "ScalarField":
        """Sample ``levelset`` at the given lattice nodes, without band selection."""
        ij = np.asarray(ij, dtype=np.int64).reshape(-1, 2)
        xy = grid.positions(ij)
        return cls(grid, ij, levelset(xy[:, 0], xy[:, 1]))

    def with_values(self, values, degenerate=None) -> "ScalarField":
        return ScalarField(self.grid, self.ij, values, self.neighbors, degenerate)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def positions(self) -> np.ndarray:
        return self.grid.positions(self.ij)

    def stencil_values(self, values=None) -> np.ndarray:
        """(N, 9) neighbourhood values; NaN where a neighbour is missing."""
        v = self.values if values is None else values
        ext = np.append(v, np.nan)
        return ext[self.neighbors]

    def index_of(self, i: int, j: int) -> int:
        """Row of lattice node (i, j), or -1 if it is not stored."""
        lo, table = self._lookup_table()
        a, b = i - lo[0], j - lo[1]
        if 0 <= a < table.shape[0] and 0 <= b < table.shape[1]:
            return int(table[a, b])
        return -1

    def rows_of(self, ij: np.ndarray) -> np.ndarray:
        lo, table = self._lookup_table()
        ij = np.asarray(ij, dtype=np.int64)
        rel = ij - lo
        inside = np.all((rel >= 0) & (rel < table.shape), axis=-1)
        out = np.full(rel.shape[:-1], -1, dtype=np.int64)
        out[inside] = table[rel[inside, 0], rel[inside, 1]]
        return out

    def _lookup_table(self):
        if self._lookup is None:
            self._lookup = _lookup_table(self.ij)
        return self._lookup


@dataclass(frozen=True)
class VectorField:
    field: ScalarField
    values: np.ndarray
    degenerate: np.ndarray


def _lookup_table(ij: np.ndarray):
    if len(ij) == 0:
        return np.zeros(2, dtype=np.int64), np.full((0, 0), -1, dtype=np.int64)
    lo = ij.min(axis=0)
    shape = ij.max(axis=0) - lo + 1
    table = np.full(tuple(shape), -1, dtype=np.int64)
    rel = ij - lo
    table[rel[:, 0], rel[:, 1]] = np.arange(len(ij))
    return lo, table


def _neighbor_table(ij: np.ndarray) -> np.ndarray:
    lo, table = _lookup_table(ij)
    out = np.full((len(ij), 9), -1, dtype=np.int64)
    if len(ij) == 0:
        return out
    rel = ij - lo
    for k, off in enumerate(STENCIL_OFFSETS):
        q = rel + off
        ok = np.all((q >= 0) & (q < table.shape), axis=1)
        out[ok, k] = table[q[ok, 0], q[ok, 1]]
    return out


def lattice_box(grid: Grid, region: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Lattice index ranges covering the box (xmin, ymin, xmax, ymax)."""
    x0, y0, x1, y1 = region
    h, (ox, oy) = grid.h, grid.origin
    ii = np.arange(math.ceil((x0 - ox) / h), math.floor((x1 - ox) / h) + 1)
    jj = np.arange(math.ceil((y0 - oy) / h), math.floor((y1 - oy) / h) + 1)
    return ii, jj


def evaluate(grid: Grid, levelset: LevelSet, region: Sequence[float],
             distance: Optional[LevelSet] = None) -> ScalarField:
    """Sample ``levelset`` on the lattice nodes of ``region`` close to its zero set.

    Nodes are kept when a distance estimate is within the band.  Without an
    explicit ``distance`` callable the estimate is |phi| / |grad phi| from the
    full-lattice samples.
    """
    h = grid.h
    ii, jj = lattice_box(grid, region)
    if len(ii) < 3 or len(jj) < 3:
        raise ValueError("region holds fewer than 3x3 lattice nodes")
    I, J = np.meshgrid(ii, jj, indexing="ij")
    X = grid.origin[0] + I * h
    Y = grid.origin[1] + J * h
    full = None
    if distance is None:
        full = np.asarray(levelset(X, Y), dtype=float)
        gx, gy = np.gradient(full, h)
        est = np.abs(full) / np.maximum(np.hypot(gx, gy), GRADIENT_GUARD)
    else:
        est = np.abs(np.asarray(distance(X, Y), dtype=float))
    band = est <= grid.band_half_width * h
    ij = np.stack([I[band], J[band]], axis=1)
    values = full[band] if full is not None else levelset(X[band], Y[band])
    field = ScalarField(grid, ij, values)
    if not has_interface(field):
        raise ValueError("no interface in region")
    return field


def has_interface(field: ScalarField) -> bool:
    v = field.values
    return bool(np.any(v <= 0) and np.any(v >= 0)) and len(interface_nodes(field)) > 0


def gradient(field: ScalarField) -> np.ndarray:
    """Central-difference gradient, (N, 2); NaN at incomplete nodes."""
    s = field.stencil_values()
    two_h = 2.0 * field.h
    g = np.stack([(s[:, PZ] - s[:, MZ]) / two_h, (s[:, ZP] - s[:, ZM]) / two_h], axis=1)
    g[~field.complete] = np.nan
    return g


def normals(field: ScalarField) -> VectorField:
    g = gradient(field)
    norm = np.hypot(g[:, 0], g[:, 1])
    degenerate = field.complete & (norm < GRADIENT_GUARD)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = g / norm[:, None]
    n[degenerate] = 0.0
    return VectorField(field, n, degenerate)


def stencil_curvature(phi: np.ndarray, h: float) -> np.ndarray:
    """Curvature from (..., 9) stencil values in canonical order.

    Returns NaN where the gradient norm falls below the guard.
    """
    phi = np.asarray(phi, dtype=float)
    px = (phi[..., PZ] - phi[..., MZ]) / (2 * h)
    py = (phi[..., ZP] - phi[..., ZM]) / (2 * h)
    pxx = (phi[..., PZ] - 2 * phi[..., ZZ] + phi[..., MZ]) / (h * h)
    pyy = (phi[..., ZP] - 2 * phi[..., ZZ] + phi[..., ZM]) / (h * h)
    pxy = (phi[..., PP] - phi[..., PM] - phi[..., MP] + phi[..., MM]) / (4 * h * h)
    norm = np.hypot(px, py)
    num = px * px * pyy - 2 * px * py * pxy + py * py * pxx
    with np.errstate(invalid="ignore", divide="ignore"):
        k = num / norm**3
    return np.where(norm < GRADIENT_GUARD, np.nan, k)


def curvature(field: ScalarField) -> ScalarField:
    """Nodal curvature; NaN at incomplete nodes, 0 at degenerate ones."""
    k = stencil_curvature(field.stencil_values(), field.h)
    degenerate = field.complete & np.isnan(k)
    k[degenerate] = 0.0
    k[~field.complete] = np.nan
    return field.with_values(k, degenerate)


def reinitialize(field: ScalarField, nu: int, dtau: Optional[float] = None,
                 subcell: bool = True, scaled_sign: bool = True) -> ScalarField:
    """``nu`` pseudo-time steps of the redistancing equation.

    Godunov upwinding in space, TVD-RK2 in pseudo-time.  Nodes missing one of
    their four axis neighbours are held fixed.

    ``subcell`` relaxes the nodes next to a sign change of the input towards
    their sub-cell distance estimate instead of upwinding across the
    interface, which keeps the zero level in place.  ``scaled_sign`` widens
    the smoothed sign by the input gradient norm, so a steep or shallow
    input moves at unit speed.  For a distance-like input both reduce to the
    plain scheme up to the sub-cell treatment.
    """
    if nu < 0:
        raise ValueError("nu must be non-negative")
    if nu == 0:
        return field
    h = field.h
    dtau = 0.5 * h if dtau is None else dtau
    phi0 = field.values
    nb = field.neighbors
    active = np.all(nb[:, [MZ, PZ, ZM, ZP]] >= 0, axis=1)
    idx = {k: np.where(nb[:, k] >= 0, nb[:, k], 0) for k in (MZ, PZ, ZM, ZP)}
    w, e, s, n = (phi0[idx[k]] for k in (MZ, PZ, ZM, ZP))

    width = h
    if scaled_sign:
        g0 = 0.5 * np.hypot(e - w, n - s) / h
        width = h * np.where(active & (g0 > GRADIENT_GUARD), g0, 1.0)
    sgn = phi0 / np.sqrt(phi0 * phi0 + width * width)
    pos = sgn > 0

    near = np.zeros(len(phi0), dtype=bool)
    dist = np.zeros(len(phi0))
    if subcell:
        for k in (MZ, PZ, ZM, ZP):
            near |= phi0 * phi0[idx[k]] < 0
        near &= active
        spread = np.maximum.reduce([0.5 * np.hypot(e - w, n - s), np.abs(e - phi0), np.abs(phi0 - w),
                                    np.abs(n - phi0), np.abs(phi0 - s)])
        dist[near] = h * phi0[near] / spread[near]

    def rate(phi):
        a = (phi - phi[idx[MZ]]) / h
        b = (phi[idx[PZ]] - phi) / h
        c = (phi - phi[idx[ZM]]) / h
        d = (phi[idx[ZP]] - phi) / h
        gp = np.sqrt(np.maximum(np.maximum(a, 0) ** 2, np.minimum(b, 0) ** 2)
                     + np.maximum(np.maximum(c, 0) ** 2, np.minimum(d, 0) ** 2))
        gm = np.sqrt(np.maximum(np.minimum(a, 0) ** 2, np.maximum(b, 0) ** 2)
                     + np.maximum(np.minimum(c, 0) ** 2, np.maximum(d, 0) ** 2))
        out = -sgn * (np.where(pos, gp, gm) - 1.0)
        out[near] = -(np.sign(phi0[near]) * np.abs(phi[near]) - dist[near]) / h
        out[~active] = 0.0
        return out

    phi = phi0.copy()
    for _ in range(nu):
        phi1 = phi + dtau * rate(phi)
        phi2 = phi1 + dtau * rate(phi1)
        phi = 0.5 * (phi + phi2)
    return field.with_values(phi, field.degenerate)


def interpolate_many(field: ScalarField, points, strict: bool = True) -> np.ndarray:
    """Bilinear interpolation of ``field`` at (N, 2) world points.

    With ``strict=False`` points whose cell is not fully stored give NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h = field.h
    rel = (pts - np.asarray(field.grid.origin)) / h
    base = np.floor(rel).astype(np.int64)
    t = rel - base
    corners = np.stack([base, base + [1, 0], base + [0, 1], base + [1, 1]], axis=1)
    rows = field.rows_of(corners)
    vals = np.append(field.values, np.nan)[rows]
    if strict and (np.any(rows < 0) or np.any(np.isnan(vals))):
        raise ValueError("interpolation outside band")
    tx, ty = t[:, 0], t[:, 1]
    return ((1 - tx) * (1 - ty) * vals[:, 0] + tx * (1 - ty) * vals[:, 1]
            + (1 - tx) * ty * vals[:, 2] + tx * ty * vals[:, 3])


def interpolate_bilinear(field: ScalarField, x) -> float:
    return float(interpolate_many(field, np.asarray(x, dtype=float).reshape(1, 2))[0])


def project_to_interface(node_pos, phi: float, normal) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    if not np.all(np.isfinite(n)) or np.hypot(n[0], n[1]) < GRADIENT_GUARD:
        raise ValueError("degenerate projection")
    return np.asarray(node_pos, dtype=float) - phi * n


def interface_nodes(field: ScalarField) -> np.ndarray:
    """Rows with a sign change (product <= 0) towards an axis neighbour."""
    v = field.values
    s = field.stencil_values()
    flag = np.zeros(len(v), dtype=bool)
    for k in (MZ, PZ, ZM, ZP):
        flag |= v * s[:, k] <= 0
    return np.flatnonzero(flag & field.complete)


def write_csv(field: ScalarField, path) -> None:
    """Debug dump with rows ``i,j,x,y,phi``."""
    xy = field.positions
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x", "y", "phi"])
        for (i, j), (x, y), v in zip(field.ij, xy, field.values):
            w.writerow([int(i), int(j), repr(float(x)), repr(float(y)), repr(float(v))])
