"""Error-correcting MLP: forward pass, training loop and JSON/Base64 export.

The network maps preprocessed features to a correction ``eps`` through four
ReLU layers and one linear unit.  The dimensionless curvature estimate is
``hk + eps``; the addition is part of the model structure and owns no weights.
"""
from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SCHEMA_VERSION = 1

# Table of architectures per refinement level: (m_iota, N_h, l2 factor).
ARCHITECTURES = {
    6: (20, 130, 5e-6),
    7: (18, 130, 5e-6),
    8: (18, 120, 5e-6),
    9: (18, 130, 5e-6),
    10: (18, 130, 1e-5),
    11: (18, 120, 7e-6),
}


def layer_shapes(m_iota: int, hidden: Sequence[int]) -> list[tuple[int, int]]:
    sizes = [m_iota, *hidden, 1]
    return list(zip(sizes[:-1], sizes[1:]))


def parameter_count(m_iota: int, hidden) -> int:
    if np.isscalar(hidden):
        hidden = (int(hidden),) * 4
    return sum(r * c + c for r, c in layer_shapes(m_iota, hidden))


class ErrorNet:
    """MLP with parameters stored in one flat vector; ``weights``/``biases`` are views."""

    def __init__(self, m_iota: int, hidden=(130, 130, 130, 130), params=None,
                 eta: Optional[int] = None, h: Optional[float] = None,
                 seed: Optional[int] = None, dtype=np.float64):
        self.m_iota = int(m_iota)
        self.hidden = tuple(int(n) for n in hidden)
        if len(self.hidden) != 4 or min(self.hidden) < 1:
            raise ValueError("hidden must hold four positive widths")
        self.eta, self.h, self.seed = eta, h, seed
        n = parameter_count(self.m_iota, self.hidden)
        if params is None:
            params = np.zeros(n)
        self.params = np.ascontiguousarray(params, dtype=dtype)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")
        self.weights, self.biases = [], []
        self._weight_mask = np.zeros(n, dtype=bool)
        at = 0
        for r, c in layer_shapes(self.m_iota, self.hidden):
            self.weights.append(self.params[at:at + r * c].reshape(r, c))
            self._weight_mask[at:at + r * c] = True
            at += r * c
            self.biases.append(self.params[at:at + c])
            at += c
        self._weight_scale = self._weight_mask.astype(self.params.dtype)

    @classmethod
    def create(cls, m_iota: int, hidden=(130, 130, 130, 130), seed: int = 0, **meta) -> "ErrorNet":
        """Uniform fan-in scaled initialisation (He gain for ReLU layers, unit gain for the output)."""
        net = cls(m_iota, hidden, seed=seed, **meta)
        rng = np.random.default_rng(seed)
        shapes = layer_shapes(net.m_iota, net.hidden)
        for k, (W, (r, _)) in enumerate(zip(net.weights, shapes)):
            gain = 1.0 if k == len(shapes) - 1 else 2.0
            limit = math.sqrt(3.0 * gain / r)
            W[...] = rng.uniform(-limit, limit, W.shape)
        return net

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def weight_mask(self) -> np.ndarray:
        return self._weight_mask

    @property
    def weight_scale(self) -> np.ndarray:
        """1.0 on weights and 0.0 on biases."""
        return self._weight_scale

    def grad_views(self, flat: np.ndarray):
        """Per-layer weight and bias views into a flat vector shaped like ``params``."""
        ws, bs, at = [], [], 0
        for r, c in layer_shapes(self.m_iota, self.hidden):
            ws.append(flat[at:at + r * c].reshape(r, c))
            at += r * c
            bs.append(flat[at:at + c])
            at += c
        return ws, bs

    def copy(self) -> "ErrorNet":
        return ErrorNet(self.m_iota, self.hidden, self.params.copy(), self.eta, self.h, self.seed,
                        self.params.dtype)

    def astype(self, dtype) -> "ErrorNet":
        return ErrorNet(self.m_iota, self.hidden, self.params.astype(dtype), self.eta, self.h,
                        self.seed, dtype)

    def correction(self, X: np.ndarray) -> np.ndarray:
        a = np.asarray(X, dtype=self.params.dtype)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ W + b, 0)
        return (a @ self.weights[-1] + self.biases[-1])[:, 0]


def _check_inputs(net: ErrorNet, X, hk) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != net.m_iota:
        raise ValueError(f"expected (N, {net.m_iota}) features, got shape {X.shape}")
    hk = np.asarray(hk).reshape(-1)
    if len(hk) != len(X):
        raise ValueError("feature rows and hk values differ in count")
    return X, hk


def batch_forward(net: ErrorNet, X, hk) -> np.ndarray:
    """hk_F = hk + eps(X) for every row."""
    X, hk = _check_inputs(net, X, hk)
    return hk.astype(net.params.dtype) + net.correction(X)


def forward(net: ErrorNet, features, hk: float) -> float:
    x = np.asarray(features)
    if x.shape != (net.m_iota,):
        raise ValueError(f"expected {net.m_iota} features, got shape {x.shape}")
    return float(batch_forward(net, x[None, :], [hk])[0])


def loss_and_grad(net: ErrorNet, X, hk, y, l2: float = 0.0, out: Optional[np.ndarray] = None,
                  check: bool = True) -> tuple[float, np.ndarray]:
    """RMSE of (hk_F - y) plus l2 * sum of squared weights, and its gradient.

    ``out`` receives the gradient when given (it must match the parameter vector).
    """
    if check:
        X, hk = _check_inputs(net, X, hk)
        y = np.asarray(y, dtype=float).reshape(-1)
    acts = [X]
    a = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.maximum(a @ W + b, 0)
        acts.append(a)
    pred = hk + (a @ net.weights[-1] + net.biases[-1])[:, 0]
    r = pred - y
    rmse = math.sqrt(float(np.mean(r * r)))
    wp = net.params * net.weight_scale
    loss = rmse + l2 * float(np.dot(wp, wp))

    grad = np.empty_like(net.params) if out is None else out
    gW, gb = net.grad_views(grad)
    delta = (r / (len(r) * rmse) if rmse > 0 else np.zeros_like(r))[:, None]
    for k in range(len(net.weights) - 1, -1, -1):
        gW[k][...] = acts[k].T @ delta
        gb[k][...] = delta.sum(axis=0)
        if k:
            delta = (delta @ net.weights[k].T) * (acts[k] > 0)
    if l2:
        wp *= 2.0 * l2
        grad += wp
    return loss, grad


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 1000
    lr_init: float = 1.5e-4
    lr_min: float = 1e-5
    lr_halve_patience: int = 15
    early_stop_patience: int = 50
    l2_factor: float = 5e-6
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    min_delta: float = 1e-12

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_init:
            raise ValueError("need 0 < lr_min <= lr_init")
        if min(self.lr_halve_patience, self.early_stop_patience, self.batch_size,
               self.max_epochs) < 1:
            raise ValueError("patiences, batch size and epoch cap must be positive")
        if self.l2_factor < 0:
            raise ValueError("l2_factor must be non-negative")


@dataclass
class History:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    COLUMNS = ("epoch", "lr", "train_rmse", "train_mae", "valid_rmse", "valid_mae", "valid_maxae")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows:
                w.writerow([row[c] if c == "epoch" else repr(float(row[c])) for c in self.COLUMNS])


def metrics(pred, y) -> dict:
    e = np.abs(np.asarray(pred, dtype=float) - np.asarray(y, dtype=float))
    if len(e) == 0:
        return {"mae": float("nan"), "maxae": float("nan"), "rmse": float("nan")}
    return {"mae": float(e.mean()), "maxae": float(e.max()), "rmse": float(np.sqrt(np.mean(e * e)))}


def train(X, hk, y, X_valid, hk_valid, y_valid, cfg: TrainConfig, hidden=(130, 130, 130, 130),
          net: Optional[ErrorNet] = None, log=None, **meta) -> tuple[ErrorNet, History]:
    """Adam on RMSE + L2; returns the weights with the best validation MAE."""
    X, hk = np.asarray(X, dtype=float), np.asarray(hk, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0 or len(X_valid) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if net is None:
        net = ErrorNet.create(X.shape[1], hidden, seed=cfg.seed, **meta)
    _check_inputs(net, X, hk)
    _check_inputs(net, X_valid, hk_valid)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    m = np.zeros_like(net.params)
    v = np.zeros_like(net.params)
    g = np.empty_like(net.params)
    tmp = np.empty_like(net.params)
    step = 0
    lr = cfg.lr_init
    best_mae, best_params = math.inf, net.params.copy()
    hist = History()
    wait_lr = wait_stop = 0
    n = len(X)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            loss, _ = loss_and_grad(net, X[rows], hk[rows], y[rows], cfg.l2_factor, out=g,
                                    check=False)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}, lr {lr:g}")
            step += 1
            m *= cfg.beta1
            np.multiply(g, 1 - cfg.beta1, out=tmp)
            m += tmp
            v *= cfg.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1 - cfg.beta2
            v += tmp
            a = lr * math.sqrt(1 - cfg.beta2**step) / (1 - cfg.beta1**step)
            np.sqrt(v, out=tmp)
            tmp += cfg.adam_eps
            np.divide(m, tmp, out=tmp)
            tmp *= a
            net.params -= tmp
        tr = metrics(batch_forward(net, X, hk), y)
        va = metrics(batch_forward(net, X_valid, hk_valid), y_valid)
        hist.rows.append({"epoch": epoch, "lr": lr, "train_rmse": tr["rmse"], "train_mae": tr["mae"],
                          "valid_rmse": va["rmse"], "valid_mae": va["mae"],
                          "valid_maxae": va["maxae"]})
        if log:
            log(hist.rows[-1])
        if va["mae"] < best_mae - cfg.min_delta:
            best_mae, best_params = va["mae"], net.params.copy()
            hist.best_epoch = epoch
            wait_lr = wait_stop = 0
        else:
            wait_lr += 1
            wait_stop += 1
            if wait_lr >= cfg.lr_halve_patience and lr > cfg.lr_min:
                lr = max(cfg.lr_min, 0.5 * lr)
                wait_lr = 0
            if wait_stop >= cfg.early_stop_patience:
                hist.stopped_early = True
                break
    net.params[...] = best_params
    return net, hist


# ---------------------------------------------------------------- persistence

def _b64(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f4").tobytes()).decode("ascii")


def _unb64(s: str, count: int, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(s.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise ValueError(f"{what}: invalid Base64 ({exc})") from None
    if len(raw) != 4 * count:
        raise ValueError(f"{what}: decoded {len(raw)} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def to_dict(net: ErrorNet) -> dict:
    layers = []
    n_layers = len(net.weights)
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        layers.append({"W_b64": _b64(W), "b_b64": _b64(b), "rows": int(W.shape[0]),
                       "cols": int(W.shape[1]),
                       "activation": "linear" if k == n_layers - 1 else "relu"})
    return {"version": SCHEMA_VERSION, "eta": net.eta, "h": net.h, "m_iota": net.m_iota,
            "hidden_widths": list(net.hidden), "layers": layers, "skip_add": True,
            "seed": net.seed}


def from_dict(d: dict) -> ErrorNet:
    for key in ("version", "m_iota", "hidden_widths", "layers", "skip_add"):
        if key not in d:
            raise ValueError(f"model schema: missing field {key}")
    if d["version"] != SCHEMA_VERSION:
        raise ValueError(f"model schema: unsupported version {d['version']}")
    if d["skip_add"] is not True:
        raise ValueError("model schema: only skip-add models are supported")
    m, hidden = int(d["m_iota"]), tuple(int(n) for n in d["hidden_widths"])
    shapes = layer_shapes(m, hidden)
    if len(d["layers"]) != len(shapes):
        raise ValueError(f"model schema: expected {len(shapes)} layers, got {len(d['layers'])}")
    parts = []
    for k, (layer, (r, c)) in enumerate(zip(d["layers"], shapes)):
        if (layer["rows"], layer["cols"]) != (r, c):
            raise ValueError(f"layer {k}: declared {layer['rows']}x{layer['cols']}, expected {r}x{c}")
        parts.append(_unb64(layer["W_b64"], r * c, f"layer {k} weights"))
        parts.append(_unb64(layer["b_b64"], c, f"layer {k} biases"))
    params = np.concatenate(parts)
    return ErrorNet(m, hidden, params, d.get("eta"), d.get("h"), d.get("seed"), dtype=np.float32)


def save_json(net: ErrorNet, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(net), fh)


def load_json(path) -> ErrorNet:
    with open(path) as fh:
        return from_dict(json.load(fh))
