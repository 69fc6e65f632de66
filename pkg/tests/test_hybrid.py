import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvex import field as F
from curvex import neural as N
from curvex import preprocess as P
from curvex.geometry import RoseShape
from curvex.hybrid import (HybridConfig, HybridStats, correct_features, ml_curvature,
                           ml_curvature_batch, numerical_hk)
from curvex.packet import HK, N_FEATURES, PHI, collect_features, reflect_features
from curvex.report import rose_case

H = 1 / 64


def fitted_pre(m=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(1000, N_FEATURES))
    X[:, PHI] *= H
    return P.fit(X, H, m)


def config(bias=None, seed=1, **kw):
    pre = fitted_pre()
    net = N.ErrorNet.create(pre.m_iota, (8,) * 4, seed=seed, h=H)
    net.params[:] += np.random.default_rng(seed).normal(0, 0.1, net.n_params)
    if bias is not None:
        net.weights[-1][...] = 0
        net.biases[-1][...] = bias
    return HybridConfig(net, pre, **kw)


def packets(hk, seed=0):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(len(hk), N_FEATURES))
    f[:, PHI] *= H
    f[:, HK] = hk
    return f


def test_config_validation():
    pre = fitted_pre()
    net = N.ErrorNet.create(pre.m_iota, (8,) * 4, h=H)
    with pytest.raises(ValueError):
        HybridConfig(net, pre, hk_low=0.007, hk_up=0.004)
    with pytest.raises(ValueError):
        HybridConfig(N.ErrorNet.create(pre.m_iota + 1, (8,) * 4), pre)
    with pytest.raises(ValueError):
        HybridConfig(N.ErrorNet.create(pre.m_iota, (8,) * 4, h=H / 2), pre)
    with pytest.raises(ValueError):
        correct_features(packets([0.1]), HybridConfig(net, pre), H / 2)


def test_below_gate_bypasses_network():
    stats = HybridStats()
    hk = np.array([0.003, -0.003, 0.0, 0.0039999])
    out = correct_features(packets(hk), config(), H, stats)
    assert np.array_equal(out, hk)
    assert stats.network_rows == 0 and stats.gated == 4


def test_gate_boundary_is_continuous():
    out = correct_features(packets([0.004, -0.004]), config(), H)
    assert np.all(np.abs(out - [0.004, -0.004]) < 1e-12)


def test_blend_example():
    # Constant correction: hk_F = -0.0055 - 0.0005 = -0.006 for both predictions.
    cfg = config(bias=-0.0005)
    out = correct_features(packets([0.0055, -0.0055]), cfg, H)
    assert out == pytest.approx([0.00575, -0.00575], abs=1e-12)


def test_above_blend_ceiling_uses_network():
    cfg = config(bias=-0.01)
    out = correct_features(packets([0.02, -0.05]), cfg, H)
    assert out == pytest.approx([0.03, -0.06], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.6, 0.6), min_size=1, max_size=20), st.integers(0, 5))
def test_output_sign_follows_numerical_estimate(hk, seed):
    hk = np.array(hk)
    out = correct_features(packets(hk, seed), config(seed=seed), H)
    nz = hk != 0
    assert np.all(np.sign(out[nz]) * np.sign(hk[nz]) >= 0)


def test_blend_ceiling_only_affects_its_window():
    hk = np.linspace(-0.02, 0.02, 81)
    f = packets(hk)
    a = correct_features(f, config(hk_up=0.007), H)
    b = correct_features(f, config(hk_up=0.01), H)
    moved = a != b
    assert np.all((np.abs(hk[moved]) > 0.004) & (np.abs(hk[moved]) <= 0.01))
    assert np.any(moved)


def test_reflected_input_gives_same_output():
    cfg = config()
    f = packets(np.linspace(0.01, 0.3, 10))
    assert np.allclose(correct_features(f, cfg, H), correct_features(reflect_features(f), cfg, H),
                       atol=1e-12)


def test_symmetric_packet_prediction():
    cfg = config()
    g = F.Grid(6)
    phi = F.evaluate(g, lambda x, y: np.hypot(x, y) - 0.2, (-0.4, -0.4, 0.4, 0.4))
    nrm, kap = F.normals(phi), F.curvature(phi)
    node = phi.index_of(9, 9)
    f = collect_features(phi, nrm, kap, [node])
    assert np.allclose(reflect_features(f), f, atol=1e-15)
    assert ml_curvature(node, cfg, phi, nrm, kap) == pytest.approx(correct_features(f, cfg, H)[0])


@pytest.fixture(scope="module")
def rose():
    case = rose_case(RoseShape(0.085, 0.300), 6, 10)
    return case.phi, F.normals(case.phi), F.curvature(case.phi), case.nodes


def test_batch_equals_per_node_on_rose(rose):
    phi, nrm, kap, nodes = rose
    cfg = config()
    stats = HybridStats()
    batch = ml_curvature_batch(nodes, cfg, phi, nrm, kap, stats)
    loop = np.array([ml_curvature(int(n), cfg, phi, nrm, kap) for n in nodes])
    assert np.max(np.abs(batch - loop)) <= 1e-6
    assert stats.nodes == len(nodes) and stats.fallbacks == 0
    assert stats.network_rows == 2 * stats.corrected
    hk = numerical_hk(phi, nrm, kap, nodes)
    assert np.array_equal(batch[np.abs(hk) < 0.004], hk[np.abs(hk) < 0.004])


def test_batch_handles_unsorted_nodes(rose):
    phi, nrm, kap, nodes = rose
    cfg = config()
    perm = np.random.default_rng(0).permutation(len(nodes))
    a = ml_curvature_batch(nodes, cfg, phi, nrm, kap)
    b = ml_curvature_batch(nodes[perm], cfg, phi, nrm, kap)
    assert np.array_equal(a[perm], b)


def test_packet_failure_falls_back_to_numerical():
    # A circle centred on a node leaves that node with a zero gradient, so the
    # packets of its interface neighbours cannot be built.
    g = F.Grid(6)
    r = np.arange(-8, 9)
    ij = np.stack(np.meshgrid(r, r, indexing="ij"), -1).reshape(-1, 2)
    phi = F.ScalarField.from_function(g, lambda x, y: np.hypot(x, y) - 1.2 * g.h, ij)
    nrm, kap = F.normals(phi), F.curvature(phi)
    assert nrm.degenerate[phi.index_of(0, 0)]
    nodes = np.array([phi.index_of(1, 0), phi.index_of(0, -1)])
    stats = HybridStats()
    out = ml_curvature_batch(nodes, config(), phi, nrm, kap, stats)
    assert np.array_equal(out, numerical_hk(phi, nrm, kap, nodes))
    assert stats.fallbacks == 2 and stats.network_rows == 0
