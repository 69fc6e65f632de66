import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvex import field as F
from curvex.geometry import CircleShape
from curvex.packet import interface_hk


def circle_sdf(r, c=(0.0, 0.0)):
    return lambda x, y: np.hypot(x - c[0], y - c[1]) - r


def circle_field(eta, r=0.25, c=(0.0, 0.0)):
    span = r + 0.25
    return F.Grid(eta).h, F.evaluate(F.Grid(eta), circle_sdf(r, c),
                                      (c[0] - span, c[1] - span, c[0] + span, c[1] + span))


def interface_kappa_mae(eta, r=0.25):
    h, phi = circle_field(eta, r)
    nodes = F.interface_nodes(phi)
    hk, _ = interface_hk(phi, F.normals(phi), F.curvature(phi), nodes)
    return np.mean(np.abs(hk / h - 1.0 / r))


def test_grid_spacing_and_validation():
    assert F.Grid(6).h == 1 / 64
    with pytest.raises(ValueError):
        F.Grid(0)
    with pytest.raises(ValueError):
        F.Grid(6, band_half_width=2.0)


def test_stencil_order():
    assert F.STENCIL_LABELS == ("mm", "0m", "pm", "m0", "00", "p0", "mp", "0p", "pp")
    assert F.STENCIL_OFFSETS[F.PM].tolist() == [1, -1]
    assert F.STENCIL_OFFSETS[F.MP].tolist() == [-1, 1]


def test_band_holds_only_nearby_nodes():
    h, phi = circle_field(6)
    d = np.abs(np.hypot(*phi.positions.T) - 0.25)
    assert d.max() <= 8 * h + 1e-12
    assert len(F.interface_nodes(phi)) > 0


def test_no_interface_raises():
    with pytest.raises(ValueError):
        F.evaluate(F.Grid(5), lambda x, y: x * 0 + 1.0, (-0.5, -0.5, 0.5, 0.5),
                   distance=lambda x, y: x * 0)


def test_neighbors_match_lattice():
    _, phi = circle_field(5)
    rows = np.flatnonzero(phi.complete)[:50]
    for n in rows:
        for k, (di, dj) in enumerate(F.STENCIL_OFFSETS):
            m = phi.neighbors[n, k]
            assert (phi.ij[m] - phi.ij[n]).tolist() == [di, dj]


def test_linear_field_gradient_and_normals_exact():
    g = F.Grid(5)
    ij = np.stack(np.meshgrid(np.arange(-5, 6), np.arange(-5, 6), indexing="ij"), -1).reshape(-1, 2)
    phi = F.ScalarField.from_function(g, lambda x, y: 0.6 * x - 0.8 * y + 0.01, ij)
    grad = F.gradient(phi)[phi.complete]
    assert np.allclose(grad, [0.6, -0.8], atol=1e-12)
    n = F.normals(phi)
    assert np.allclose(n.values[phi.complete], [0.6, -0.8], atol=1e-12)
    k = F.curvature(phi).values[phi.complete]
    assert np.allclose(k, 0.0, atol=1e-9)
    assert np.all(np.isnan(F.gradient(phi)[~phi.complete]))


def test_degenerate_nodes_flagged():
    g = F.Grid(5)
    ij = np.stack(np.meshgrid(np.arange(-3, 4), np.arange(-3, 4), indexing="ij"), -1).reshape(-1, 2)
    phi = F.ScalarField.from_function(g, lambda x, y: 0.0 * x, ij)
    n = F.normals(phi)
    assert np.all(n.degenerate[phi.complete])
    assert np.all(n.values[phi.complete] == 0.0)
    k = F.curvature(phi)
    assert np.all(k.values[phi.complete] == 0.0) and np.all(k.degenerate[phi.complete])


def test_stencil_curvature_closed_form():
    # phi = x^2 + y^2 sampled on a stencil at (x0, y0): central differences of a
    # quadratic are exact, so kappa = 1 / |x0|.
    h, x0, y0 = 0.01, 0.3, -0.4
    vals = [(x0 + i * h) ** 2 + (y0 + j * h) ** 2 for i, j in F.STENCIL_OFFSETS]
    assert math.isclose(F.stencil_curvature(np.array(vals), h), 1 / 0.5, rel_tol=1e-9)


def test_interface_curvature_frozen_mae():
    maes = [interface_kappa_mae(eta) for eta in (6, 7, 8, 9)]
    assert np.allclose(maes, [2.2987e-3, 5.6458e-4, 1.3261e-4, 3.2494e-5], rtol=2e-3)


def test_interface_curvature_second_order():
    maes = [interface_kappa_mae(eta) for eta in (6, 7, 8, 9)]
    orders = np.log2(np.array(maes[:-1]) / np.array(maes[1:]))
    assert np.all(orders >= 1.8)


def test_bilinear_interpolation_at_nodes_and_cell_centre():
    g = F.Grid(4)
    ij = np.stack(np.meshgrid(np.arange(0, 4), np.arange(0, 4), indexing="ij"), -1).reshape(-1, 2)
    f = F.ScalarField.from_function(g, lambda x, y: 1 + 2 * x - 3 * y + 5 * x * y, ij)
    h = g.h
    assert math.isclose(F.interpolate_bilinear(f, (h, 2 * h)), 1 + 2 * h - 6 * h + 10 * h * h)
    mid = (1.5 * h, 1.5 * h)
    corners = [f.values[f.index_of(i, j)] for i in (1, 2) for j in (1, 2)]
    assert math.isclose(F.interpolate_bilinear(f, mid), np.mean(corners))


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2),
       st.floats(0.2, 2.8), st.floats(0.2, 2.8))
def test_bilinear_reproduces_bilinear_functions(a, b, c, d, px, py):
    g = F.Grid(3)
    ij = np.stack(np.meshgrid(np.arange(0, 4), np.arange(0, 4), indexing="ij"), -1).reshape(-1, 2)
    fn = lambda x, y: a + b * x + c * y + d * x * y  # noqa: E731
    f = F.ScalarField.from_function(g, fn, ij)
    x, y = px * g.h, py * g.h
    assert math.isclose(F.interpolate_bilinear(f, (x, y)), fn(x, y), abs_tol=1e-12)


def test_interpolation_outside_band():
    g = F.Grid(4)
    ij = np.stack(np.meshgrid(np.arange(0, 3), np.arange(0, 3), indexing="ij"), -1).reshape(-1, 2)
    f = F.ScalarField.from_function(g, lambda x, y: x + y, ij)
    with pytest.raises(ValueError):
        F.interpolate_bilinear(f, (5 * g.h, 0.5 * g.h))
    out = F.interpolate_many(f, [(5 * g.h, 0.5 * g.h), (0.5 * g.h, 0.5 * g.h)], strict=False)
    assert np.isnan(out[0]) and math.isclose(out[1], g.h)


def test_projection():
    p = F.project_to_interface((0.3, 0.0), 0.05, (1.0, 0.0))
    assert np.allclose(p, (0.25, 0.0))
    with pytest.raises(ValueError):
        F.project_to_interface((0.3, 0.0), 0.05, (0.0, 0.0))


def test_interface_nodes_have_sign_change():
    _, phi = circle_field(6)
    s = phi.stencil_values()
    for n in F.interface_nodes(phi):
        axis = s[n, [F.MZ, F.PZ, F.ZM, F.ZP]]
        assert np.any(phi.values[n] * axis <= 0)


def test_reinit_zero_steps_is_identity():
    _, phi = circle_field(6)
    assert np.array_equal(F.reinitialize(phi, 0).values, phi.values)


def test_reinit_keeps_exact_sdf_frozen_residual():
    # Measured first-order residual within 2h of the interface, in units of h.
    expected = {6: 0.03193, 7: 0.01548, 8: 0.007749, 9: 0.003977}
    for eta, val in expected.items():
        h, phi = circle_field(eta)
        r = F.reinitialize(phi, 10)
        near = np.abs(phi.values) <= 2 * h
        res = np.max(np.abs(r.values - phi.values)[near]) / h
        assert res == pytest.approx(val, rel=1e-3)


def test_reinit_residual_decays_first_order():
    res = []
    for eta in (6, 7, 8):
        h, phi = circle_field(eta)
        near = np.abs(phi.values) <= 2 * h
        res.append(np.max(np.abs(F.reinitialize(phi, 10).values - phi.values)[near]))
    assert np.all(np.log2(np.array(res[:-1]) / np.array(res[1:])) > 1.8)


def test_reinit_quadratic_circle_preserves_sign_and_flattens_gradient():
    shape = CircleShape((0.0, 0.0), 0.25)
    g = F.Grid(6)
    phi = F.evaluate(g, shape, (-0.5, -0.5, 0.5, 0.5), distance=shape.distance_estimate)
    r = F.reinitialize(phi, 10)
    keep = np.abs(phi.values) > g.h / 10
    assert np.all(np.sign(r.values[keep]) == np.sign(phi.values[keep]))
    nodes = F.interface_nodes(r)
    gn = np.hypot(*F.gradient(r)[nodes].T)
    assert gn.min() > 0.95 and gn.max() < 1.02


def test_reinit_steep_quadratic_circle_keeps_sign():
    shape = CircleShape((0.01, -0.02), 3.9)
    g = F.Grid(6)
    phi = F.evaluate(g, shape, (-4.0, -4.0, 4.0, 4.0), distance=shape.distance_estimate)
    r = F.reinitialize(phi, 10)
    keep = np.abs(phi.values) > g.h / 10
    assert np.all(np.sign(r.values[keep]) == np.sign(phi.values[keep]))


def test_write_csv(tmp_path):
    _, phi = circle_field(4)
    path = tmp_path / "phi.csv"
    F.write_csv(phi, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i,j,x,y,phi" and len(lines) == len(phi) + 1
