import csv
import json

import numpy as np
import pytest

from curvex import dataset as D
from curvex import neural, preprocess
from curvex.cli import build_parser, main, read_config
from curvex.packet import HK, N_FEATURES, PHI
from curvex.report import METHODS, REPORT_SCHEMA

TINY_CONF = "eta = 4\nhk_min_star = 0.1  # coarse\nscale = 0.05\n"


def write_synthetic(path, n, seed):
    rng = np.random.default_rng(seed)
    y = -np.abs(rng.gamma(1.5, 0.05, n))
    X = rng.normal(size=(n, N_FEATURES))
    X[:, PHI] /= 64
    X[:, HK] = y + rng.normal(0, 0.01, n)
    D.write_csv(D.Dataset(X, y, 6), path)


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    d = tmp_path_factory.mktemp("prep")
    write_synthetic(d / "c.csv", 1500, 0)
    write_synthetic(d / "s.csv", 1500, 1)
    assert main(["prepare", "--in", str(d / "c.csv"), str(d / "s.csv"), "--out", str(d / "data"),
                 "--eta", "6", "--m-iota", "6", "--seed", "2"]) == 0
    (d / "train.conf").write_text("hidden_width = 8\nmax_epochs = 3\nlr_init = 1e-3\n")
    assert main(["train", "--data", str(d / "data"), "--config", str(d / "train.conf"),
                 "--out", str(d / "model.json"), "--seed", "1"]) == 0
    return d


def test_generate_is_deterministic(tmp_path):
    conf = tmp_path / "gen.conf"
    conf.write_text(TINY_CONF)
    for name in ("a.csv", "b.csv"):
        assert main(["generate", str(conf), "--kind", "circle", "--seed", "5",
                     "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    man = json.loads((tmp_path / "a.manifest.json").read_text())
    assert man["nc"] == len(man["shapes"]) and man["config"]["rng_seed"] == 5
    assert man["config"]["scale"] == 0.05


def test_generate_sine(tmp_path):
    conf = tmp_path / "gen.conf"
    conf.write_text(TINY_CONF)
    assert main(["generate", str(conf), "--kind", "sine", "--out", str(tmp_path / "s.csv")]) == 0
    assert D.read_csv(tmp_path / "s.csv", 4).y.max() <= 0


def test_bad_kind_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--kind", "square", "--eta", "6", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2


def test_data_errors_exit_3(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("eta = 6\ncolour = blue\n")
    assert main(["generate", str(conf), "--kind", "circle", "--out", str(tmp_path / "x.csv")]) == 3
    assert "unknown key" in capsys.readouterr().err
    assert main(["generate", "--kind", "circle", "--out", str(tmp_path / "x.csv")]) == 3
    assert main(["eval-rose", "--eta", "6", "--a", "0.3", "--b", "0.3"]) == 3


def test_read_config_types(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("# comment\neta = 7\nscale=0.5\nl2_factor = 1e-5\n\n")
    assert read_config(conf) == {"eta": 7, "scale": 0.5, "l2_factor": 1e-5}
    conf.write_text("eta = seven\n")
    with pytest.raises(ValueError, match=":1:"):
        read_config(conf)


def test_prepare_outputs(prepared):
    data = prepared / "data"
    info = json.loads((data / "manifest.json").read_text())
    parts = {n: D.read_csv(data / f"{n}.csv", 6) for n in ("train", "test", "valid")}
    assert info["n_train"] == len(parts["train"])
    # Round-half-up per class moves each part by at most half a row per class.
    n = info["n_merged"]
    for name, frac in (("train", 0.7), ("test", 0.1), ("valid", 0.1)):
        assert abs(len(parts[name]) - frac * n) <= 0.5 * 100
    pre = preprocess.load_json(data / "preprocessor.json")
    assert pre.transform(parts["train"].X[:1], 1 / 64).shape == (1, 6)


def test_train_outputs(prepared):
    net = neural.load_json(prepared / "model.json")
    assert net.m_iota == 6 and net.hidden == (8,) * 4 and net.eta == 6
    rows = list(csv.DictReader(open(prepared / "model.history.csv")))
    assert 1 <= len(rows) <= 3


def test_train_is_deterministic(prepared, tmp_path):
    assert main(["train", "--data", str(prepared / "data"), "--config",
                 str(prepared / "train.conf"), "--out", str(tmp_path / "m.json"),
                 "--seed", "1"]) == 0
    assert (tmp_path / "m.json").read_text() == (prepared / "model.json").read_text()


def test_eval_rose_outputs(prepared, tmp_path):
    out, corr = tmp_path / "r.json", tmp_path / "c.csv"
    assert main(["eval-rose", "--model", str(prepared / "model.json"),
                 "--pre", str(prepared / "data" / "preprocessor.json"), "--eta", "6",
                 "--out", str(out), "--dump-correlation", str(corr)]) == 0
    reports = json.loads(out.read_text())["reports"]
    assert [r["method"] for r in reports] == list(METHODS)
    for r in reports:
        for key in REPORT_SCHEMA["required"]:
            assert key in r
        assert r["maxae"] >= r["mae"] and r["rmse"] >= r["mae"] and r["wall_time"] > 0
    rows = list(csv.reader(open(corr)))
    assert rows[0] == ["x_gamma", "y_gamma", "true_hk", "baseline_hk", "hybrid_hk"]
    assert len(rows) - 1 == reports[0]["n_nodes"] == reports[2]["n_nodes"]


def test_convergence_baseline(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--etas", "7", "8", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [int(r["eta"]) for r in rows] == [7, 8]
    assert float(rows[1]["baseline_order_mae"]) > 0


def test_parser_lists_commands():
    text = build_parser().format_help()
    for cmd in ("generate", "prepare", "train", "eval-rose", "convergence"):
        assert cmd in text
