"""Radially symmetric point-charge solutions in flat space of dimension m.

A charge ``a`` at the origin forces the flux through every sphere of
radius ``r`` to equal ``a``::

    omega_{m-1} r^{m-1} u'/sqrt(1 - u'^2) = a

which gives ``u' = a / sqrt(a^2 + (omega_{m-1} r^{m-1})^2)``.  The slope
tends to 1 (light cone) at the charge and the tilt ``w`` grows like
``r^{1-m}``, which is still integrable.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import InvalidArgumentError


def sphere_area_constant(m):
    """Area of the unit (m-1)-sphere, ``2 pi^{m/2} / Gamma(m/2)``."""
    if int(m) != m or m < 2:
        raise InvalidArgumentError(f"dimension must be an integer >= 2, got {m}")
    return 2.0 * math.pi ** (m / 2.0) / special.gamma(m / 2.0)


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise InvalidArgumentError("radii must be positive")
    return r


def radial_slope(a, m, r):
    """Slope ``u'(r)``; carries the sign of ``a``."""
    r = _check_r(r)
    flux_area = sphere_area_constant(m) * r ** (m - 1)
    return a / np.hypot(a, flux_area)


def radial_tilt(a, m, r):
    """Tilt ``w(r) = sqrt(1 + (a / (omega r^{m-1}))^2)``."""
    r = _check_r(r)
    return np.hypot(1.0, a / (sphere_area_constant(m) * r ** (m - 1)))


def radial_potential(a, m, r0, r):
    """``u(r)`` with the anchor ``u(r0) = 0``.

    Closed form for m = 2; adaptive quadrature of the slope otherwise.
    ``r0 = 0`` is accepted as the limit anchor at the charge.
    """
    r = _check_r(r)
    if r0 < 0:
        raise InvalidArgumentError("anchor radius must be non-negative")
    if a == 0:
        return np.zeros_like(r)
    if m == 2:
        k = 2.0 * math.pi / abs(a)
        return math.copysign(1.0, a) / k * (np.arcsinh(k * r) - np.arcsinh(k * r0))
    sphere_area_constant(m)

    def one(x):
        val, _ = integrate.quad(lambda s: radial_slope(a, m, s) if s > 0 else math.copysign(1.0, a),
                                r0, x, epsabs=1e-13, epsrel=1e-13, limit=200)
        return val

    return np.vectorize(one, otypes=[float])(r)


def radial_tilt_mass(a, m, R):
    """``I(R) = integral of w over the ball B_R``.

    Closed form for m = 2::

        I(R) = pi [R sqrt(R^2 + b^2) + b^2 asinh(R / b)],   b = |a| / (2 pi)
    """
    if not R > 0:
        raise InvalidArgumentError("R must be positive")
    omega = sphere_area_constant(m)
    if a == 0:
        return omega * R**m / m
    if m == 2:
        b = abs(a) / (2.0 * math.pi)
        return math.pi * (R * math.hypot(R, b) + b * b * math.asinh(R / b))
    # integrand omega r^{m-1} w(r) = sqrt((omega r^{m-1})^2 + a^2)
    val, _ = integrate.quad(lambda s: math.hypot(omega * s ** (m - 1), a), 0.0, R,
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def saturation_radius(a, m, threshold):
    """Radius inside which ``|u'| > threshold``."""
    if not 0 < threshold < 1:
        raise InvalidArgumentError("threshold must lie in (0, 1)")
    omega = sphere_area_constant(m)
    # omega r^{m-1} = |a| sqrt(1 - t^2) / t
    return (abs(a) * math.sqrt(1.0 - threshold**2) / threshold / omega) ** (1.0 / (m - 1))


@dataclass(frozen=True)
class RadialSolution:
    a: float
    m: int
    r_grid: np.ndarray
    u_prime: np.ndarray
    u: np.ndarray
    w: np.ndarray
    tilt_mass: np.ndarray


def radial_solution(a, m, r_grid, r0=0.0):
    """Sample slope, potential, tilt and tilt mass on ``r_grid``."""
    r = _check_r(r_grid)
    return RadialSolution(
        a=float(a), m=int(m), r_grid=r,
        u_prime=radial_slope(a, m, r),
        u=radial_potential(a, m, r0, r),
        w=radial_tilt(a, m, r),
        tilt_mass=np.array([radial_tilt_mass(a, m, x) for x in np.ravel(r)]).reshape(r.shape),
    )
