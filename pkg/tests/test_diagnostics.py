import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from borninfeld.diagnostics import (DiagnosticsConfig, HESSIAN_METHODS, ball_growth, field_energy,
                                    flux_balance, hessian_integrals, light_segment_scan,
                                    run_diagnostics, singular_set, tilt_gradient, tilt_integrals)
from borninfeld.energy import slack
from borninfeld.errors import InvalidArgumentError
from borninfeld.measures import ChargeMeasure
from borninfeld.mesh import MetricField, graph_distance
from borninfeld.oracle import radial_tilt_mass, saturation_radius
from borninfeld.solver import solve_admm

from conftest import (TWO_PI, affine_problem, atom_solution, disk_mesh, dipole_problem,
                      square_mesh)

ORIGIN = [(0.0, 0.0)]


# ---------------------------------------------------------------- tilt integrals

def test_tilt_integrals_of_zero_field():
    m = square_mesh(0.1)
    ti = tilt_integrals(np.zeros(m.n_nodes), MetricField.flat(m), m)
    assert abs(ti.tilt_l1 - 1.0) <= 1e-12
    assert abs(ti.tilt_loglinear - math.log(2.0)) <= 1e-12
    assert ti.n_saturated == 0


def test_tilt_l1_matches_closed_form():
    pr, res = atom_solution(0.02)
    ti = tilt_integrals(res.u, pr.metric, pr.mesh, 0.1, ORIGIN)
    closed = math.pi * (math.sqrt(2) + math.asinh(1.0))
    assert abs(ti.tilt_l1 - closed) <= 0.05 * closed


def test_tilt_loglinear_under_refinement():
    a = [tilt_integrals(res.u, pr.metric, pr.mesh, 0.1, ORIGIN).tilt_loglinear
         for pr, res in (atom_solution(0.04), atom_solution(0.02))]
    assert abs(a[1] - a[0]) < 0.1 * abs(a[1])


def test_tilt_loglinear_shrinks_with_exclusion():
    pr, res = atom_solution(0.04)
    vals = [tilt_integrals(res.u, pr.metric, pr.mesh, r, ORIGIN).tilt_loglinear
            for r in (0.0, 0.05, 0.1, 0.2, 0.4)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------- light segments

def test_scan_of_constant_is_zero():
    m = disk_mesh(0.1)
    scan = light_segment_scan(np.full(m.n_nodes, 0.4), MetricField.flat(m), m)
    assert scan.max_ratio == 0.0 and not scan.flagged


def test_scan_flags_distance_field():
    m = disk_mesh(0.1)
    metric = MetricField.flat(m)
    u = graph_distance(m, metric, 0)
    scan = light_segment_scan(u, metric, m, sample=[0])
    assert scan.max_ratio >= 0.999 and scan.flagged


def test_scan_empty_sample():
    m = disk_mesh(0.2)
    with pytest.raises(InvalidArgumentError):
        light_segment_scan(np.zeros(m.n_nodes), MetricField.flat(m), m, sample=[])


def test_scan_single_atom_stays_below_one():
    pr, res = atom_solution(0.02)
    scan = light_segment_scan(res.u, pr.metric, pr.mesh, atom_locations=ORIGIN)
    assert scan.max_ratio <= 0.99


def test_scan_soundness_on_feasible_fields(rng):
    m = disk_mesh(0.1)
    metric = MetricField.flat(m)
    x, y = m.nodes.T
    for _ in range(5):
        c = rng.standard_normal(4)
        u = c[0] * x + c[1] * y + c[2] * np.sin(3 * x * y) + c[3] * x * x
        while np.min(slack(u, metric, m)) <= 0:
            u = 0.9 * u
        scan = light_segment_scan(u, metric, m, sample=np.arange(0, m.n_nodes, 7))
        assert scan.max_ratio <= 1.1


# ---------------------------------------------------------------- singular set

def test_singular_set_empty_for_affine():
    pr = affine_problem(0.1, (0.5, 0.0))
    tris, frac = singular_set(pr.phi, pr.metric, pr.mesh, 0.1)
    assert len(tris) == 0 and frac == 0.0


def test_singular_set_is_nested():
    pr, res = atom_solution(0.04)
    prev = None
    for delta in (0.2, 0.1, 0.05, 0.025):
        tris, frac = singular_set(res.u, pr.metric, pr.mesh, delta)
        if prev is not None:
            assert set(tris) <= set(prev[0]) and frac <= prev[1]
        prev = (tris, frac)


def test_singular_set_against_saturated_disc():
    pr, res = atom_solution(0.02)
    _, frac = singular_set(res.u, pr.metric, pr.mesh, 0.05)
    # the disc r <= r* where the exact slope reaches 0.95, as a fraction of the unit disc
    predicted = saturation_radius(TWO_PI, 2, 0.95) ** 2
    assert frac <= 2 * predicted


def test_singular_set_threshold_range():
    m = square_mesh(0.2)
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(InvalidArgumentError):
            singular_set(np.zeros(m.n_nodes), MetricField.flat(m), m, bad)


# ---------------------------------------------------------------- ball growth

def test_ball_growth_of_zero_field():
    m = disk_mesh(0.02)
    radii = np.array([0.1, 0.2, 0.4, 0.6])
    bg = ball_growth(np.zeros(m.n_nodes), MetricField.flat(m), m, (0.0, 0.0), radii)
    exact = math.pi * radii**2
    assert np.all(np.abs(bg.mass - exact) / exact <= 2 * m.h_max / radii)
    assert np.all(np.diff(bg.ratio) > 0) and bg.passed


def test_ball_growth_clips_large_radii():
    m = disk_mesh(0.1)
    with pytest.warns(UserWarning, match="clipped"):
        bg = ball_growth(np.zeros(m.n_nodes), MetricField.flat(m), m, (0.5, 0.0), [0.1, 0.3, 0.6])
    np.testing.assert_array_equal(bg.radii, [0.1, 0.3])


def test_ball_growth_rejects_unsorted_radii():
    m = disk_mesh(0.2)
    with pytest.raises(InvalidArgumentError):
        ball_growth(np.zeros(m.n_nodes), MetricField.flat(m), m, (0.0, 0.0), [0.3, 0.1])


def test_ball_growth_single_atom_profile():
    pr, res = atom_solution(0.02)
    s = np.linspace(0.1, 0.5, 9)
    bg = ball_growth(res.u, pr.metric, pr.mesh, (0.0, 0.0), s)
    closed = np.array([radial_tilt_mass(TWO_PI, 2, x) for x in s]) / s
    assert np.max(np.abs(bg.ratio / closed - 1)) <= 0.2


def test_ball_growth_bounded_at_the_atom():
    pr, res = atom_solution(0.02)
    h = 0.02
    bg = ball_growth(res.u, pr.metric, pr.mesh, (0.0, 0.0), np.geomspace(4 * h, 0.5, 12))
    assert bg.passed and bg.max_ratio <= 3 * bg.median_ratio


# ---------------------------------------------------------------- Hessian integrals

@pytest.mark.parametrize("method", sorted(HESSIAN_METHODS))
def test_hessian_integrals_vanish_on_affine(method):
    pr = affine_problem(0.1, (0.3, -0.4), 0.2)
    hi = hessian_integrals(pr.phi, pr.metric, pr.mesh, method=method)
    assert max(hi.j1, hi.j2, hi.j3) <= 1e-10
    assert hi.method == method


def _quadratic_oracle():
    # u = x^2/4: Du = (x/2, 0), D^2u = diag(1/2, 0), w = (1 - x^2/4)^(-1/2)
    w = lambda x: 1 / math.sqrt(1 - x * x / 4)
    j1 = integrate.quad(lambda x: w(x) / 4, 0, 1, epsabs=1e-14)[0]
    j2 = integrate.quad(lambda x: w(x) ** 3 * (x / 4) ** 2, 0, 1, epsabs=1e-14)[0]
    j3 = integrate.quad(lambda x: w(x) ** 5 * (x * x / 8) ** 2, 0, 1, epsabs=1e-14)[0]
    return j1, j2, j3


@pytest.mark.parametrize("method", sorted(HESSIAN_METHODS))
def test_hessian_integrals_on_quadratic(method):
    m = square_mesh(0.02)
    hi = hessian_integrals(m.nodes[:, 0] ** 2 / 4, MetricField.flat(m), m, method=method)
    for got, ref in zip((hi.j1, hi.j2, hi.j3), _quadratic_oracle()):
        assert abs(got - ref) <= 0.1 * ref


def test_hessian_integrals_under_refinement():
    js = []
    for h in (0.04, 0.02):
        pr, res = atom_solution(h)
        hi = hessian_integrals(res.u, pr.metric, pr.mesh, 0.1, ORIGIN)
        js.append(np.array([hi.j1, hi.j2, hi.j3]))
    assert np.all(np.abs(js[1] - js[0]) < 0.15 * np.abs(js[1]))


def test_hessian_integrals_unknown_method():
    m = square_mesh(0.2)
    with pytest.raises(InvalidArgumentError, match="unknown Hessian method"):
        hessian_integrals(np.zeros(m.n_nodes), MetricField.flat(m), m, method="edge-jump")


def test_tilt_gradient_exact_for_linear():
    m = disk_mesh(0.1)
    f = 2.0 - 0.7 * m.centroids[:, 0] + 1.3 * m.centroids[:, 1]
    np.testing.assert_allclose(tilt_gradient(m, f), np.tile([-0.7, 1.3], (m.n_triangles, 1)),
                               atol=1e-9)


def test_tilt_gradient_form_uses_lapse():
    # u -> 2u with alpha -> 2 keeps w; D^2u(Du, .) scales by 4 and D^2u(Du, Du) by 8
    m = square_mesh(0.05)
    u = m.nodes[:, 0] ** 2 / 4
    base = hessian_integrals(u, MetricField.flat(m), m)
    hi = hessian_integrals(2 * u, MetricField.flat(m, 2.0), m)
    assert hi.j1 == pytest.approx(4 * base.j1, rel=1e-9)
    assert hi.j2 == pytest.approx(16 * base.j2, rel=1e-9)
    assert hi.j3 == pytest.approx(64 * base.j3, rel=1e-9)


# ---------------------------------------------------------------- energy and flux

def test_field_energy_examples():
    m = square_mesh(0.1)
    metric = MetricField.flat(m)
    assert field_energy(np.zeros(m.n_nodes), ChargeMeasure(), metric, m) == 0.0
    e = field_energy(0.6 * m.nodes[:, 0], ChargeMeasure(), metric, m)
    assert abs(e - 0.25) <= 1e-12


def test_field_energy_under_refinement():
    e = [field_energy(res.u, pr.rho, pr.metric, pr.mesh)
         for pr, res in (atom_solution(0.04), atom_solution(0.02))]
    assert all(math.isfinite(x) for x in e)
    assert abs(e[1] - e[0]) < 0.1 * abs(e[1])


def test_flux_balance_affine():
    pr = affine_problem(0.1, (0.5, 0.0))
    assert flux_balance(pr.phi, pr.rho, pr.metric, pr.mesh) <= 1e-12


def test_flux_balance_single_atom():
    pr, res = atom_solution(0.02)
    assert flux_balance(res.u, pr.rho, pr.metric, pr.mesh) <= 1e-8


def test_dipole_boundary_flux_vanishes():
    from borninfeld.diagnostics import boundary_flux
    pr = dipole_problem(0.08, a=1.0)
    res = solve_admm(pr)
    assert abs(boundary_flux(res.u, pr.rho, pr.metric, pr.mesh)) <= 1e-8


# ---------------------------------------------------------------- report

def test_report_is_deterministic_and_finite():
    pr, res = atom_solution(0.04)
    cfg = DiagnosticsConfig(exclusion_radius=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = run_diagnostics(res.u, pr.rho, pr.metric, pr.mesh, cfg).to_json()
    b = run_diagnostics(res.u, pr.rho, pr.metric, pr.mesh, cfg).to_json()
    assert a == b
    rep = run_diagnostics(res.u, pr.rho, pr.metric, pr.mesh, cfg)
    assert 0.0 <= rep.singular_fraction <= 1.0 and rep.light_segment_max_ratio >= 0.0
    assert rep.hessian_integrals["method"] == "tilt-gradient"
    assert rep.pass_flags["flux_balance"] and rep.pass_flags["tilt_finite"]


def test_config_rejects_unknown_keys():
    with pytest.raises(InvalidArgumentError, match="unknown diagnostics keys"):
        DiagnosticsConfig.from_dict({"delta": 0.1})
