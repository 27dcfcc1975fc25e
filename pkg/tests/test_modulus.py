import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad, quad

from poletsky import modulus as md
from poletsky.curves import CurveFamily, Polyline, annulus_paths_family, is_admissible, radial_family
from poletsky.errors import ConfigError, InvalidInputError, NumericError
from poletsky.grid import DensityField, Grid, chord_matrix
from poletsky.maps import DomainDescriptor, gallery, with_domain

E = math.e


def ring_grid(r2, N):
    return Grid.cube([-r2, -r2], [r2, r2], N)


# -- analytic oracle and eta -----------------------------------------------------

def test_ring_modulus_examples():
    assert md.ring_modulus_analytic(2, 2, 1, E) == pytest.approx(2 * math.pi, rel=1e-14)
    assert md.ring_modulus_analytic(2, 3, 1, 4) == pytest.approx(math.pi / 2, rel=1e-14)
    # n = 3, p = 3 is conformal: 4 pi / log(r2/r1)^2
    assert md.ring_modulus_analytic(3, 3, 1, 2) == pytest.approx(4 * math.pi / math.log(2) ** 2)


def test_ring_modulus_matches_quadrature():
    for n, p, r1, r2 in [(2, 1.5, 0.5, 3.0), (3, 2.0, 1.0, 2.5), (3, 4.0, 0.2, 1.0)]:
        I = quad(lambda t: t ** ((1 - n) / (p - 1)), r1, r2, epsabs=1e-14)[0]
        area = 2 * math.pi if n == 2 else 4 * math.pi
        assert md.ring_modulus_analytic(n, p, r1, r2) == pytest.approx(area * I ** (1 - p), rel=1e-10)


def test_ring_modulus_blows_up_monotonically():
    vals = [md.ring_modulus_analytic(2, 2, 1, 1 + d) for d in (1.0, 0.1, 0.01, 0.001)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 6000


@pytest.mark.parametrize("args", [(1, 2, 1, 2), (2, 1.0, 1, 2), (2, 2, 2, 1), (2, 2, 0, 1), (2, 2, 1, np.inf)])
def test_ring_modulus_rejects_bad_parameters(args):
    with pytest.raises(ConfigError):
        md.ring_modulus_analytic(*args)


@given(n=st.sampled_from([2, 3]), p=st.floats(1.1, 6), r1=st.floats(0.05, 3), w=st.floats(0.05, 10))
@settings(max_examples=60, deadline=None)
def test_extremal_eta_unit_integral(n, p, r1, w):
    eta = md.extremal_eta(n, p, r1, r1 + w)
    assert quad(eta, r1, r1 + w, epsabs=1e-14, epsrel=1e-13, limit=200)[0] == pytest.approx(1.0, abs=1e-12)
    assert eta.integral() == pytest.approx(1.0, abs=1e-14)


def test_extremal_eta_examples():
    eta = md.extremal_eta(2, 2, 1, E)
    assert float(eta(1.0 + 1e-15)) == pytest.approx(1.0)
    eta3 = md.extremal_eta(3, 3, 2, 5)
    r = np.linspace(2.1, 4.9, 7)
    assert np.allclose(eta3(r), 1 / (r * math.log(2.5)))
    assert eta3(np.array([1.0, 2.0, 5.0, 6.0])).tolist() == [0.0, 0.0, 0.0, 0.0]


def test_tabulated_eta():
    eta = md.tabulated_eta(1, 3, [1, 2, 3], [0.25, 0.75, 0.25])
    assert eta.integral() == pytest.approx(1.0)
    assert float(eta(1.5)) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        md.tabulated_eta(1, 3, [1, 2, 3], [0.1, 0.1, 0.1])
    with pytest.raises(ConfigError):
        md.tabulated_eta(1, 3, [1.5, 3], [1, 1])
    assert eta.scaled(2).integral() == pytest.approx(2.0)


# -- rho and both right-hand routes ---------------------------------------------

def test_rho_identity_is_eta_of_radius():
    eta = md.extremal_eta(2, 2, 1, E)
    grid = ring_grid(3, 64)
    rho, info = md.rho_from_eta(gallery("identity"), eta, [0, 0], grid)
    r = np.linalg.norm(grid.centers(), axis=-1)
    assert np.allclose(rho.values, eta(r))
    assert info["branch_cells"] == 0


def test_rho_radial_and_winding_formulas():
    grid = ring_grid(2.5, 64)
    r = np.linalg.norm(grid.centers(), axis=-1)
    eta = md.extremal_eta(2, 2, 1, 8)
    rho, _ = md.rho_from_eta(gallery("radial", {"alpha": 3}), eta, [0, 0], grid)
    assert np.allclose(rho.values, eta(r**3) * 3 * r**2)
    eta = md.extremal_eta(2, 2, 1, 16)
    rho, info = md.rho_from_eta(gallery("winding", {"k": 2}), eta, [0, 0], Grid.cube([-2.5, -2.5], [2.5, 2.5], 63))
    r = np.linalg.norm(Grid.cube([-2.5, -2.5], [2.5, 2.5], 63).centers(), axis=-1)
    expect = np.where(r > 1e-9, eta(r**2) * 2 * r, 0.0)
    assert np.allclose(rho.values, expect)
    assert info["branch_cells"] == 1  # the centre cell of an odd grid sits on the origin


def test_rhs_domain_route_examples():
    eta = md.extremal_eta(2, 2, 1, E)
    ident = with_domain(gallery("identity"), DomainDescriptor.ball([0, 0], 3.0))
    v = md.rhs_domain_route(ident, eta, [0, 0], 2, Grid.covering(ident.domain, 512))
    assert v == pytest.approx(2 * math.pi, rel=0.01)
    wind = with_domain(gallery("winding", {"k": 2}), DomainDescriptor.ball([0, 0], 3.2))
    eta = md.extremal_eta(2, 2, 1, 9)
    v = md.rhs_domain_route(wind, eta, [0, 0], 2, Grid.covering(wind.domain, 512))
    assert v == pytest.approx(4 * math.pi / math.log(9), rel=0.01)


def test_rhs_domain_route_homogeneous_in_eta():
    eta = md.extremal_eta(2, 3, 1, 2)
    f = with_domain(gallery("radial", {"alpha": 2}), DomainDescriptor.ball([0, 0], 1.6))
    grid = Grid.covering(f.domain, 64)
    a = md.rhs_domain_route(f, eta, [0, 0], 3, grid)
    b = md.rhs_domain_route(f, eta.scaled(2), [0, 0], 3, grid)
    assert b == pytest.approx(8 * a, rel=1e-12)


def test_polar_nodes_measure():
    for n, exact in [(2, math.pi * (9 - 1)), (3, 4 / 3 * math.pi * (27 - 1))]:
        _, W, _ = md.polar_nodes(np.zeros(n), 1, 3, 64)
        assert W.sum() == pytest.approx(exact, rel=1e-3)


def test_image_route_identity_and_winding():
    eta = md.extremal_eta(2, 2, 1, E)
    res = md.rhs_image_route(gallery("identity"), eta, [0, 0], 2, 256)
    assert res.value == pytest.approx(2 * math.pi, rel=1e-3)
    assert res.kct_min == pytest.approx(1) and res.kct_max == pytest.approx(1)
    assert res.skipped_measure == 0 and res.off_image_measure == 0
    w = md.rhs_image_route(gallery("winding", {"k": 2}), eta, [0, 0], 2, 256)
    assert w.value == pytest.approx(2 * res.value, rel=1e-10)
    assert w.kct_mean == pytest.approx(2)


def test_image_route_against_scipy_for_linear_map():
    A = np.array([[2.0, 0.5], [0.0, 1.0]])
    f = gallery("linear", {"matrix": A.tolist()})
    eta = md.extremal_eta(2, 2, 1, 2)
    res = md.rhs_image_route(f, eta, [0, 0], 2, 256)

    def integrand(t, r):
        u = np.array([math.cos(t), math.sin(t)])
        k = np.linalg.norm(A.T @ u) ** 2 / abs(np.linalg.det(A))
        return k * eta(r) ** 2 * r

    exact = dblquad(integrand, 1, 2, 0, 2 * math.pi, epsabs=1e-10)[0]
    assert res.value == pytest.approx(exact, rel=1e-4)


def test_image_route_homogeneous_in_eta():
    eta = md.extremal_eta(2, 2, 1, 3)
    f = gallery("radial", {"alpha": 0.5})
    a = md.rhs_image_route(f, eta, [0, 0], 2, 64).value
    b = md.rhs_image_route(f, eta.scaled(3), [0, 0], 2, 64).value
    assert b == pytest.approx(9 * a, rel=1e-12)


def test_refine_until_stable():
    val, res, hist = md.refine_until_stable(lambda N: 1.0 + 1.0 / N, start=32, cap=1024, rtol=5e-3)
    assert res == 256 and len(hist) == 4
    _, res, _ = md.refine_until_stable(lambda N: float(N), start=32, cap=128)
    assert res == 128


# -- discrete modulus -----------------------------------------------------------

def test_single_cell_chord():
    grid = Grid.cube([0, 0], [1, 1], 4)
    c = Polyline.from_points([[0.3, 0.27], [0.45, 0.4]])
    est = md.discrete_modulus(CurveFamily([c], "one"), grid, 2.5)
    v, l = grid.cell_volume, c.length
    assert est.value == pytest.approx(v / l**2.5, rel=1e-3)
    assert est.kind == "discrete-lower" and est.diagnostics["certified"]


@given(seed=st.integers(0, 10_000), p=st.floats(1.3, 5.0))
@settings(max_examples=30, deadline=None)
def test_single_curve_closed_form(seed, p):
    rng = np.random.default_rng(seed)
    grid = Grid.cube([-3, -3], [3, 3], 32)
    pts = rng.uniform(-2.9, 2.9, size=(rng.integers(2, 6), 2))
    c = Polyline.from_points(pts)
    L = chord_matrix(grid, [c])
    exact = md.single_curve_modulus(L.data, np.full(L.nnz, grid.cell_volume), p)
    est = md.discrete_modulus(CurveFamily([c], "one"), grid, p)
    assert est.value == pytest.approx(exact, rel=1e-3)
    assert est.diagnostics["dual_bound"] <= est.value * (1 + 1e-12)


def test_ring_family_close_to_oracle():
    grid = ring_grid(E, 128)
    fam = radial_family([0, 0], 1, E, 1024) + annulus_paths_family([0, 0], 1, E, 128, 64, seed=3)
    est = md.discrete_modulus(fam, grid, 2)
    assert est.value == pytest.approx(2 * math.pi, rel=0.05)
    assert est.diagnostics["relative_gap"] <= 1e-3


def test_p3_ring_close_to_oracle():
    grid = ring_grid(4, 128)
    fam = radial_family([0, 0], 1, 4, 1024)
    assert md.discrete_modulus(fam, grid, 3).value == pytest.approx(math.pi / 2, rel=0.05)


def test_subfamily_monotone():
    grid = ring_grid(2, 64)
    full = radial_family([0, 0], 1, 2, 512) + annulus_paths_family([0, 0], 1, 2, 64, 32, seed=1)
    sub = CurveFamily(full.curves[::3], "sub")
    a = md.discrete_modulus(sub, grid, 2).value
    b = md.discrete_modulus(full, grid, 2).value
    assert a <= b * (1 + 1e-3)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_scaling_law(p):
    fam = radial_family([0, 0], 1, 2, 256) + annulus_paths_family([0, 0], 1, 2, 64, 16, seed=2)
    grid = ring_grid(2, 64)
    a = md.discrete_modulus(fam, grid, p).value
    b = md.discrete_modulus(fam.scaled(2.0), grid.scaled(2.0), p).value
    assert b / a == pytest.approx(2.0 ** (2 - p), rel=0.01)


def test_lower_below_any_admissible_upper():
    grid = ring_grid(E, 64)
    fam = radial_family([0, 0], 1, E, 512)
    est = md.discrete_modulus(fam, grid, 2)
    rho, _ = md.rho_from_eta(gallery("identity"), md.extremal_eta(2, 2, 1, E), [0, 0], grid)
    adm = is_admissible(rho, fam)
    upper = DensityField(grid, rho.values / adm.min_integral).integral_power(2)
    assert est.value <= upper * (1 + 1e-9)
    # the returned density is itself admissible and achieves the value
    rep = is_admissible(est.density, fam)
    assert rep.pass_fraction == 1.0
    assert est.density.integral_power(2) == pytest.approx(est.value, rel=1e-12)


def test_discrete_modulus_errors_and_flags():
    grid = ring_grid(2, 16)
    with pytest.raises(InvalidInputError):
        md.discrete_modulus(CurveFamily([], "empty"), grid, 2)
    with pytest.raises(InvalidInputError):
        md.discrete_modulus(radial_family([0, 0], 1, 2, 4), grid, 1.0)
    est = md.discrete_modulus(radial_family([0, 0], 1, 2, 64) + annulus_paths_family([0, 0], 1, 2, 32, 8, 0),
                              grid, 2, max_iter=1)
    assert est.diagnostics["certified"] is False
    assert est.to_dict()["diagnostics"]["iterations"] == 1


# -- verification ---------------------------------------------------------------

def test_verify_identity_at_128():
    rep = md.verify_inequality(gallery("identity"), [0, 0], 1, E, 2, md.VerifySettings(grid=128, admissibility_grid=512))
    assert rep["error"] is None
    assert rep["pass"], rep["checks"]
    names = [c["name"] for c in rep["checks"]]
    assert len(names) == len(set(names))
    assert rep["lhs_analytic"] == pytest.approx(2 * math.pi)


def test_verify_without_analytic_ring():
    A = [[1.5, 0.3], [0.1, 0.8]]
    rep = md.verify_inequality(gallery("linear", {"matrix": A}), [0.2, 0], 1, 2, 2.5,
                               md.VerifySettings(grid=64, admissibility_grid=256, path_curves=8))
    assert "lhs_analytic" not in rep
    lhs, rhs = rep["lhs"]["value"], rep["rhs"]["image_route"]
    assert lhs <= rhs * 1.05


def test_verify_reports_numeric_failure(monkeypatch):
    def boom(*a, **k):
        raise NumericError("solver blew up")

    monkeypatch.setattr(md, "discrete_modulus", boom)
    rep = md.verify_inequality(gallery("identity"), [0, 0], 1, 2, 2, md.VerifySettings(grid=32, path_curves=4))
    assert rep["pass"] is False and "solver blew up" in rep["error"]
    assert "families" in rep["timings"]


def test_verify_rejects_bad_ring():
    with pytest.raises(ConfigError):
        md.verify_inequality(gallery("identity"), [0, 0], 2, 1, 2)
