"""Analytic interfaces used for training and evaluation.

Each shape is a callable level-set ``shape(x, y)`` accepting numpy arrays and
exposes a cheap ``distance_estimate`` used to pick band nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEAREST_SEEDS = 64
NEWTON_STEPS = 20
NEWTON_TOL = 1e-12
_CANDIDATES = 3


@dataclass(frozen=True)
class CircleShape:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def __call__(self, x, y):
        return circle_phi(self, x, y)

    def distance_estimate(self, x, y):
        return np.hypot(x - self.center[0], y - self.center[1]) - self.radius

    @property
    def curvature(self) -> float:
        return 1.0 / self.radius


def circle_phi(shape: CircleShape, x, y):
    """Quadratic circle level-set, negative inside (not a distance function)."""
    cx, cy = shape.center
    return (x - cx) ** 2 + (y - cy) ** 2 - shape.radius ** 2


@dataclass(frozen=True)
class SineShape:
    """``A sin(w t)`` in a frame shifted by ``shift`` and tilted by ``tilt``."""

    amplitude: float
    frequency: float
    shift: tuple[float, float] = (0.0, 0.0)
    tilt: float = 0.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.frequency > 0):
            raise ValueError("amplitude and frequency must be positive")
        if not (-math.pi / 2 <= self.tilt < math.pi / 2):
            raise ValueError("tilt must lie in [-pi/2, pi/2)")

    def __call__(self, x, y):
        return sine_phi(self, x, y)

    def to_canonical(self, x, y):
        c, s = math.cos(self.tilt), math.sin(self.tilt)
        dx = np.asarray(x, dtype=float) - self.shift[0]
        dy = np.asarray(y, dtype=float) - self.shift[1]
        return c * dx + s * dy, -s * dx + c * dy

    def to_world(self, u, v):
        c, s = math.cos(self.tilt), math.sin(self.tilt)
        return self.shift[0] + c * u - s * v, self.shift[1] + s * u + c * v

    def f(self, t):
        return self.amplitude * np.sin(self.frequency * t)

    def curvature_at(self, t):
        a, w = self.amplitude, self.frequency
        return -a * w * w * np.sin(w * t) / (1.0 + (a * w * np.cos(w * t)) ** 2) ** 1.5

    def distance_estimate(self, x, y):
        """First-order distance: vertical gap over the local slope factor."""
        u, v = self.to_canonical(x, y)
        a, w = self.amplitude, self.frequency
        return (v - self.f(u)) / np.sqrt(1.0 + (a * w * np.cos(w * u)) ** 2)

    def nearest_parameter(self, x, y) -> np.ndarray:
        u, v = self.to_canonical(x, y)
        return nearest_parameter(self.amplitude, self.frequency, u, v)


def nearest_parameter(amplitude: float, frequency: float, u, v) -> np.ndarray:
    """Curve parameter of the point on ``A sin(w t)`` closest to (u, v).

    The search interval |t - u| <= |v - f(u)| always holds the minimiser.  It
    is sampled at 64 seeds; the best sampled local minima are bracketed,
    bisected on the stationarity condition and polished with Newton steps.
    """
    a, w = float(amplitude), float(frequency)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    shape = np.broadcast(u, v).shape
    u, v = np.broadcast_to(u, shape).ravel(), np.broadcast_to(v, shape).ravel()
    n = len(u)

    def f(t):
        return a * np.sin(w * t)

    def stationarity(t, uu, vv):
        return (t - uu) + (f(t) - vv) * a * w * np.cos(w * t)

    def slope(t, vv):
        ft, fp, fpp = f(t), a * w * np.cos(w * t), -a * w * w * np.sin(w * t)
        return 1.0 + fp * fp + (ft - vv) * fpp

    half = np.abs(v - f(u)) + 1e-300
    steps = np.linspace(-1.0, 1.0, NEAREST_SEEDS + 1)
    ts = u[:, None] + half[:, None] * steps
    g = (ts - u[:, None]) ** 2 + (f(ts) - v[:, None]) ** 2

    # Sampled local minima, best few per query.
    left = np.concatenate([np.full((n, 1), np.inf), g[:, :-1]], axis=1)
    right = np.concatenate([g[:, 1:], np.full((n, 1), np.inf)], axis=1)
    score = np.where((g <= left) & (g <= right), g, np.inf)
    ncand = min(_CANDIDATES, NEAREST_SEEDS + 1)
    cand = np.argsort(score, axis=1, kind="stable")[:, :ncand]
    valid = np.isfinite(np.take_along_axis(score, cand, axis=1))

    rows = np.repeat(np.arange(n), ncand)
    k = cand.ravel()
    uu, vv = u[rows], v[rows]
    lo = ts[rows, np.maximum(k - 1, 0)]
    hi = ts[rows, np.minimum(k + 1, NEAREST_SEEDS)]
    t = ts[rows, k].copy()

    flo, fhi = stationarity(lo, uu, vv), stationarity(hi, uu, vv)
    bracketed = (flo <= 0) & (fhi >= 0)
    blo, bhi = lo.copy(), hi.copy()
    for _ in range(40):
        mid = 0.5 * (blo + bhi)
        fm = stationarity(mid, uu, vv)
        go_right = fm < 0
        blo = np.where(go_right, mid, blo)
        bhi = np.where(go_right, bhi, mid)
    t = np.where(bracketed, 0.5 * (blo + bhi), t)

    converged = np.zeros(len(t), dtype=bool)
    for _ in range(NEWTON_STEPS):
        d = slope(t, vv)
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = stationarity(t, uu, vv) / d
        step_ok = np.isfinite(dt) & (d > 0)
        t_new = np.where(step_ok & ~converged, t - dt, t)
        inside = (t_new >= lo) & (t_new <= hi)
        t = np.where(inside, t_new, t)
        converged |= step_ok & inside & (np.abs(dt) < NEWTON_TOL)
        if converged.all():
            break

    # Non-converged interior candidates fall back to a fine scan of their
    # bracket.  A sampled minimum on the search boundary that is not
    # bracketed cannot be the minimiser, so it keeps its sample value.
    interior = (k > 0) & (k < NEAREST_SEEDS)
    bad = np.flatnonzero(~converged & ~bracketed & valid.ravel() & interior)
    if len(bad):
        fine = np.linspace(0.0, 1.0, 4097)
        tt = lo[bad, None] + (hi[bad] - lo[bad])[:, None] * fine
        gg = (tt - uu[bad, None]) ** 2 + (f(tt) - vv[bad, None]) ** 2
        t[bad] = tt[np.arange(len(bad)), np.argmin(gg, axis=1)]

    t = t.reshape(n, ncand)
    dist2 = (t - u[:, None]) ** 2 + (f(t) - v[:, None]) ** 2
    dist2 = np.where(valid, dist2, np.inf)
    best = np.argmin(dist2, axis=1)
    return t[np.arange(n), best].reshape(shape)


def sine_phi(shape: SineShape, x, y):
    """Signed distance to the sine wave; negative above it in its own frame."""
    u, v = shape.to_canonical(x, y)
    scalar = np.ndim(u) == 0
    t = nearest_parameter(shape.amplitude, shape.frequency, u, v)
    d = np.hypot(t - u, shape.f(t) - v)
    side = np.sign(shape.f(u) - v)
    out = side * d
    return float(np.ravel(out)[0]) if scalar else out


def sine_target_curvature(shape: SineShape, x_on_gamma) -> float | np.ndarray:
    """Exact curvature at the curve point nearest to ``x_on_gamma`` (1/length)."""
    p = np.asarray(x_on_gamma, dtype=float)
    t = shape.nearest_parameter(p[..., 0], p[..., 1])
    k = shape.curvature_at(t)
    return float(k) if np.ndim(k) == 0 else k


@dataclass(frozen=True)
class RoseShape:
    """Polar rose ``r = a cos(p theta) + b``."""

    a: float
    b: float
    p: int = 5

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1 or self.p % 2 == 0:
            raise ValueError("p must be an odd positive integer")
        if self.a < 0 or not self.b > self.a:
            raise ValueError("rose needs 0 <= a < b (non self-intersecting petals)")

    def __call__(self, x, y):
        return rose_phi(self, x, y)

    def gamma(self, theta):
        return self.a * np.cos(self.p * theta) + self.b

    def dgamma(self, theta):
        return -self.a * self.p * np.sin(self.p * theta)

    def d2gamma(self, theta):
        return -self.a * self.p ** 2 * np.cos(self.p * theta)

    def curvature_at(self, theta):
        g, g1, g2 = self.gamma(theta), self.dgamma(theta), self.d2gamma(theta)
        return (g * g + 2 * g1 * g1 - g * g2) / (g * g + g1 * g1) ** 1.5

    def distance_estimate(self, x, y):
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        slope = self.dgamma(theta) / np.maximum(r, 1e-12)
        return (r - self.gamma(theta)) / np.sqrt(1.0 + slope * slope)


def rose_phi(shape: RoseShape, x, y):
    """``|x| - a cos(p theta) - b``; the origin takes theta = 0."""
    return np.hypot(x, y) - shape.gamma(np.arctan2(y, x))


def rose_target_curvature(shape: RoseShape, x_on_gamma) -> float | np.ndarray:
    p = np.asarray(x_on_gamma, dtype=float)
    k = shape.curvature_at(np.arctan2(p[..., 1], p[..., 0]))
    return float(k) if np.ndim(k) == 0 else k
