import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from borninfeld.errors import InvalidArgumentError
from borninfeld.oracle import (radial_potential, radial_slope, radial_solution, radial_tilt,
                               radial_tilt_mass, saturation_radius, sphere_area_constant)

TWO_PI = 2 * math.pi


def richardson_trapezoid(f, a, b, levels=12):
    """Romberg table built from composite trapezoid sums (an independent quadrature oracle)."""
    R = [[0.5 * (b - a) * (f(a) + f(b))]]
    for k in range(1, levels):
        n = 2**k
        x = a + (b - a) * (np.arange(1, n, 2) / n)
        row = [0.5 * R[-1][0] + (b - a) / n * np.sum(f(x))]
        for j in range(1, k + 1):
            row.append(row[j - 1] + (row[j - 1] - R[-1][j - 1]) / (4**j - 1))
        R.append(row)
    return R[-1][-1]


def sphere_area_by_recursion(m):
    # omega_1 = 2 pi, omega_2 = 4 pi, omega_{k+1} = 2 pi omega_{k-1} / (k - 1) for the (k)-sphere
    areas = {1: TWO_PI, 2: 4 * math.pi}
    for k in range(3, m):
        areas[k] = TWO_PI * areas[k - 2] / (k - 1)
    return areas[m - 1]


def test_sphere_constants():
    assert sphere_area_constant(2) == pytest.approx(TWO_PI, rel=1e-15)
    assert sphere_area_constant(3) == pytest.approx(4 * math.pi, rel=1e-15)
    assert sphere_area_constant(4) == pytest.approx(2 * math.pi**2 / math.gamma(2), rel=1e-15)
    for m in range(2, 9):
        assert sphere_area_constant(m) == pytest.approx(sphere_area_by_recursion(m), rel=1e-14)


def test_sphere_constant_rejects_low_dimension():
    with pytest.raises(InvalidArgumentError):
        sphere_area_constant(1)


def test_slope_at_unit_radius():
    assert abs(radial_slope(TWO_PI, 2, 1.0) - 1 / math.sqrt(2)) <= 1e-15


def test_slope_limits():
    assert radial_slope(TWO_PI, 2, 1e8) < 1e-7
    assert 1 - radial_slope(TWO_PI, 2, 1e-8) < 1e-15


def test_slope_rejects_bad_radius():
    with pytest.raises(InvalidArgumentError):
        radial_slope(1.0, 2, 0.0)
    with pytest.raises(InvalidArgumentError):
        radial_slope(1.0, 2, [0.5, -1.0])


@pytest.mark.parametrize("m", [2, 3, 5])
def test_radial_operator_residual(m):
    # (1/r^{m-1}) d/dr (r^{m-1} u'/sqrt(1 - u'^2)) = 0 by central differences in log r
    # F is constant, so a wide stencil costs nothing and keeps round-off down
    a = 3.0
    r = np.logspace(-1, 1, 60)
    q = 1e-2

    def F(s):
        up = radial_slope(a, m, s)
        return s ** (m - 1) * up / np.sqrt(1 - up * up)

    dF = (F(r * (1 + q)) - F(r * (1 - q))) / (2 * q * r)
    assert np.max(np.abs(dF / r ** (m - 1)) / (np.abs(F(r)) / r**m)) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50).filter(lambda a: abs(a) > 1e-6), st.integers(2, 6), st.floats(1e-3, 1e2))
def test_flux_identity(a, m, r):
    # stay where 1 - u'^2 is resolved in double precision
    assume(abs(a) / (sphere_area_constant(m) * r ** (m - 1)) < 10)
    up = radial_slope(a, m, r)
    flux = sphere_area_constant(m) * r ** (m - 1) * up / math.sqrt(1 - up * up)
    assert abs(flux - a) <= 1e-12 * abs(a)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20), st.integers(2, 5))
def test_monotone_and_odd(a, m):
    # start where the flux density a / (omega r^{m-1}) is below 1e6, so 1 - u' stays representable
    r0 = max(0.01, (a / (sphere_area_constant(m) * 1e6)) ** (1 / (m - 1)))
    r = np.linspace(r0, 3, 100)
    up = radial_slope(a, m, r)
    assert np.all(np.diff(up) < 0) and np.all((up > 0) & (up < 1))
    np.testing.assert_array_equal(radial_slope(-a, m, r), -up)
    np.testing.assert_array_equal(radial_tilt(-a, m, r), radial_tilt(a, m, r))
    u = radial_potential(a, m, 0.01, r[1:])
    assert np.all(np.diff(u) > 0)


def test_tilt_matches_slope():
    r = np.linspace(0.05, 2, 40)
    up = radial_slope(TWO_PI, 2, r)
    np.testing.assert_allclose(radial_tilt(TWO_PI, 2, r), 1 / np.sqrt(1 - up**2), rtol=1e-12)


def test_potential_anchor():
    assert radial_potential(TWO_PI, 2, 1.0, 1.0) == 0.0


def test_potential_from_the_charge():
    closed = radial_potential(TWO_PI, 2, 0.0, 1.0)
    quad, _ = integrate.quad(lambda s: radial_slope(TWO_PI, 2, s), 1e-300, 1.0, epsabs=1e-13)
    assert abs(closed - math.asinh(1.0)) <= 1e-15
    assert abs(closed - quad) <= 1e-8


def test_potential_m3_against_romberg():
    a, r0, r = 2.0, 0.1, 1.0
    ref = richardson_trapezoid(lambda s: radial_slope(a, 3, s), r0, r)
    assert abs(radial_potential(a, 3, r0, r) - ref) <= 1e-8


def test_potential_rejects_bad_radii():
    with pytest.raises(InvalidArgumentError):
        radial_potential(1.0, 2, -1.0, 0.5)
    with pytest.raises(InvalidArgumentError):
        radial_potential(1.0, 2, 0.1, 0.0)


def test_tilt_mass_closed_form():
    closed = radial_tilt_mass(TWO_PI, 2, 1.0)
    assert abs(closed - math.pi * (math.sqrt(2) + math.asinh(1.0))) <= 1e-13
    assert abs(closed - 7.2118) < 1e-4
    quad, _ = integrate.quad(lambda s: TWO_PI * s * radial_tilt(TWO_PI, 2, s), 0, 1.0, epsabs=1e-13)
    assert abs(closed - quad) <= 1e-8


def test_tilt_mass_m3_matches_direct_quadrature():
    # omega r^2 w(r) = sqrt((4 pi r^2)^2 + a^2) stays finite at the charge
    ref = richardson_trapezoid(lambda s: np.sqrt((4 * math.pi * s * s) ** 2 + 1.5**2), 0.0, 0.8)
    assert abs(radial_tilt_mass(1.5, 3, 0.8) - ref) <= 1e-8


def test_tilt_mass_per_radius_is_bounded():
    R = np.logspace(-3, 0, 50)
    ratio = np.array([radial_tilt_mass(TWO_PI, 2, x) for x in R]) / R
    # tends to 2 pi b = |a| as R -> 0
    assert np.all(np.isfinite(ratio)) and ratio.max() < 10
    assert abs(ratio[0] - TWO_PI) < 1e-2


def test_tilt_mass_without_charge():
    assert radial_tilt_mass(0.0, 2, 0.7) == pytest.approx(math.pi * 0.49, rel=1e-15)


def test_saturation_radius():
    r = saturation_radius(TWO_PI, 2, 0.95)
    assert abs(radial_slope(TWO_PI, 2, r) - 0.95) <= 1e-14
    assert r == pytest.approx(0.3287, abs=1e-4)
    with pytest.raises(InvalidArgumentError):
        saturation_radius(TWO_PI, 2, 1.0)


def test_radial_solution_bundle():
    sol = radial_solution(TWO_PI, 2, [0.5, 1.0])
    np.testing.assert_allclose(sol.u, np.arcsinh([0.5, 1.0]), rtol=1e-14)
    assert sol.w[1] == pytest.approx(math.sqrt(2), rel=1e-14)
    assert sol.tilt_mass[1] == pytest.approx(7.2117997, rel=1e-7)
