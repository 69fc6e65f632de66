"""Command-line front end: generate, prepare, train, eval-rose, convergence.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset as dset
from . import neural, preprocess
from .geometry import RoseShape
from .hybrid import HybridConfig
from .report import convergence, eval_rose, write_convergence, write_correlation, write_reports

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
SPLIT_NAMES = ("train", "test", "valid")
# Keys accepted in config files besides the GenConfig / TrainConfig fields.
EXTRA_KEYS = {"m_iota": int, "hidden_width": int, "hk_low": float, "hk_up": float}


# ---------------------------------------------------------------- config files

def _key_types() -> dict:
    types = dict(EXTRA_KEYS)
    for cls in (dset.GenConfig, neural.TrainConfig):
        for f in dataclasses.fields(cls):
            name = f.type if isinstance(f.type, str) else f.type.__name__
            types[f.name] = {"int": int, "float": float}[name]
    return types


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    types = _key_types()
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = types[key](value)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def _pick(cls, conf: dict, **override):
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {k: v for k, v in conf.items() if k in names}
    kw.update({k: v for k, v in override.items() if v is not None})
    return cls(**kw)


# ---------------------------------------------------------------- pipeline pieces

def prepare_datasets(circles: dset.Dataset, sines: dset.Dataset, m_iota: int, seed: int = 0):
    """Balance the sine set, merge, split 70/10/10 and fit the preprocessor.

    Returns ``(merged, {"train", "test", "valid"}, preprocessor)``.
    """
    if circles.eta != sines.eta:
        raise ValueError("circle and sine datasets use different resolutions")
    merged = dset.concat([circles, dset.balance_histogram(sines, seed=seed)])
    parts = dict(zip(SPLIT_NAMES, dset.stratified_split(merged, seed=seed)))
    pre = preprocess.fit(parts["train"].X, merged.h, m_iota)
    return merged, parts, pre


def train_model(train: dset.Dataset, valid: dset.Dataset, pre: preprocess.Preprocessor,
                cfg: neural.TrainConfig, hidden_width: int, log=None):
    h = train.h
    return neural.train(pre.transform(train.X, h), dset.hk_column(train), train.y,
                        pre.transform(valid.X, h), dset.hk_column(valid), valid.y, cfg,
                        hidden=(hidden_width,) * 4, log=log, eta=train.eta, h=h)


def predict(net: neural.ErrorNet, pre: preprocess.Preprocessor, ds: dset.Dataset) -> np.ndarray:
    return neural.batch_forward(net, pre.transform(ds.X, ds.h), dset.hk_column(ds))


def _fmt(m: dict) -> str:
    return "  ".join(f"{k}={v:.6g}" for k, v in m.items())


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    conf = read_config(args.config) if args.config else {}
    if args.eta is None and "eta" not in conf:
        raise ValueError("eta must be given by --eta or the config file")
    cfg = _pick(dset.GenConfig, conf, eta=args.eta, scale=args.scale, rng_seed=args.seed)
    gen = dset.generate_circles if args.kind == "circle" else dset.generate_sines
    ds = gen(cfg)
    out = Path(args.out)
    dset.write_csv(ds, out)
    dset.write_manifest(ds, out.with_suffix(".manifest.json"))
    print(f"{args.kind}: {len(ds)} samples -> {out}")
    return 0


def cmd_prepare(args) -> int:
    circles = dset.read_csv(args.inputs[0], args.eta)
    sines = dset.read_csv(args.inputs[1], args.eta)
    merged, parts, pre = prepare_datasets(circles, sines, args.m_iota, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dset.write_csv(merged, out / "dataset.csv")
    for name, ds in parts.items():
        dset.write_csv(ds, out / f"{name}.csv")
    preprocess.save_json(pre, out / "preprocessor.json")
    info = {"eta": args.eta, "m_iota": args.m_iota, "seed": args.seed, "n_merged": len(merged),
            **{f"n_{k}": len(v) for k, v in parts.items()},
            **{f"sha256_{k}": v.digest() for k, v in parts.items()}}
    with open(out / "manifest.json", "w") as fh:
        json.dump(info, fh, indent=1)
    print(" ".join(f"{k}={len(v)}" for k, v in parts.items()), f"merged={len(merged)}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    with open(data / "manifest.json") as fh:
        info = json.load(fh)
    eta = int(info["eta"])
    pre = preprocess.load_json(data / "preprocessor.json")
    train, valid, merged = (dset.read_csv(data / f"{n}.csv", eta)
                            for n in ("train", "valid", "dataset"))
    conf = read_config(args.config) if args.config else {}
    _, width, l2 = neural.ARCHITECTURES.get(eta, (pre.m_iota, 130, 5e-6))
    conf.setdefault("l2_factor", l2)
    width = conf.get("hidden_width", width)
    cfg = _pick(neural.TrainConfig, conf, seed=args.seed, max_epochs=args.epochs)

    def log(row):
        if args.verbose:
            print(f"epoch {row['epoch']}: {_fmt({k: v for k, v in row.items() if k != 'epoch'})}",
                  flush=True)

    net, hist = train_model(train, valid, pre, cfg, width, log=log)
    out = Path(args.out)
    neural.save_json(net, out)
    hist.write_csv(out.with_suffix(".history.csv"))
    print(f"epochs={len(hist.rows)} best={hist.best_epoch} early_stop={hist.stopped_early}")
    print("train", _fmt(neural.metrics(predict(net, pre, train), train.y)))
    print("valid", _fmt(neural.metrics(predict(net, pre, valid), valid.y)))
    print("dataset", _fmt(neural.metrics(predict(net, pre, merged), merged.y)),
          "| baseline", _fmt(neural.metrics(dset.hk_column(merged), merged.y)))
    return 0


def _hybrid(model, pre, hk_low=0.004, hk_up=0.007) -> HybridConfig:
    return HybridConfig(neural.load_json(model), preprocess.load_json(pre), hk_low, hk_up)


def cmd_eval_rose(args) -> int:
    shape = RoseShape(args.a, args.b, args.p)
    cfg = None
    if args.model:
        if not args.pre:
            raise ValueError("--model needs --pre")
        cfg = _hybrid(args.model, args.pre)
    reports, rows = eval_rose(shape, args.eta, cfg, nu=args.nu)
    for r in reports:
        print(f"{r.method:14s} mae={r.mae:.6g} maxae={r.maxae:.6g} rmse={r.rmse:.6g} "
              f"n={r.n_nodes} time={r.wall_time:.3g}s rho={r.regression['pearson']:.5f}")
    if args.out:
        write_reports(reports, args.out)
    if args.dump_correlation:
        write_correlation(rows, args.dump_correlation)
    return 0


def cmd_convergence(args) -> int:
    models = {}
    if args.model_dir:
        d = Path(args.model_dir)
        for eta in args.etas:
            model, pre = d / f"model_eta{eta}.json", d / f"pre_eta{eta}.json"
            if model.exists() and pre.exists():
                models[eta] = _hybrid(model, pre)
            else:
                print(f"warning: no model for eta={eta} in {d}", file=sys.stderr)
    rows = convergence(RoseShape(args.a, args.b, args.p), args.etas, models, nu=args.nu)
    for row in rows:
        print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) and not math.isnan(v) else f"{k}={v}"
                       for k, v in row.items()))
    if args.out:
        write_convergence(rows, args.out)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvex", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a circle or sine dataset")
    g.add_argument("config", nargs="?", help="key = value config file")
    g.add_argument("--kind", choices=("circle", "sine"), required=True)
    g.add_argument("--eta", type=int)
    g.add_argument("--scale", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    q = sub.add_parser("prepare", help="balance, merge, split and fit the preprocessor")
    q.add_argument("--in", dest="inputs", nargs=2, metavar=("CIRCLES", "SINES"), required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--eta", type=int, required=True)
    q.add_argument("--m-iota", type=int)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_prepare)

    t = sub.add_parser("train", help="train the error-correcting network")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-rose", help="evaluate on a polar rose")
    e.add_argument("--model")
    e.add_argument("--pre")
    e.add_argument("--eta", type=int, required=True)
    e.add_argument("--a", type=float, default=0.085)
    e.add_argument("--b", type=float, default=0.300)
    e.add_argument("--p", type=int, default=5)
    e.add_argument("--nu", type=int, choices=(10, 20), default=10)
    e.add_argument("--out")
    e.add_argument("--dump-correlation")
    e.set_defaults(func=cmd_eval_rose)

    c = sub.add_parser("convergence", help="rose errors over several resolutions")
    c.add_argument("--model-dir")
    c.add_argument("--etas", type=int, nargs="+", default=[7, 8, 9, 10])
    c.add_argument("--a", type=float, default=0.120)
    c.add_argument("--b", type=float, default=0.305)
    c.add_argument("--p", type=int, default=5)
    c.add_argument("--nu", type=int, default=10)
    c.add_argument("--out")
    c.set_defaults(func=cmd_convergence)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "m_iota", 0) is None:
        args.m_iota = neural.ARCHITECTURES.get(args.eta, (20,))[0]
    try:
        return args.func(args)
    except FloatingPointError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
