"""Born-Infeld energy on P1 fields, tilt factor, exact gradient and proximal map.

Per-triangle algebra is done in a sigma-orthonormal frame: with
``sigma^{-1} = C C^T`` the frame gradient ``C^T Du`` has Euclidean length
``|Du|_sigma``, so the variable-metric problems reduce to isotropic ones.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GradientUndefinedError, InvalidArgumentError
from .measures import load_vector, pair
from .mesh import assemble_weighted_stiffness, check_nodal, p1_gradient

SLACK_FLOOR = 1e-14
INTERIOR_MARGIN = 1e-10
# round-off allowance before a slack is declared infeasible
FEASIBILITY_TOL = 1e-12


def _integrand_from_s2(s2, alpha):
    # alpha (1 - sqrt(1 - s2)) without cancellation
    return alpha * s2 / (1.0 + np.sqrt(np.clip(1.0 - s2, 0.0, None)))


def bi_integrand(p, alpha=1.0, sigma=None):
    """Born-Infeld Lagrangian ``alpha (1 - sqrt(1 - |p|_sigma^2 / alpha^2))`` for one covector."""
    p = np.asarray(p, dtype=float)
    sinv = np.eye(2) if sigma is None else np.linalg.inv(np.asarray(sigma, dtype=float))
    s2 = float(p @ sinv @ p) / alpha**2
    if s2 > 1.0 + FEASIBILITY_TOL:
        raise DomainError(f"|p|_sigma = {math.sqrt(s2) * alpha:.6g} exceeds alpha = {alpha:.6g}")
    return float(_integrand_from_s2(min(s2, 1.0), alpha))


def flux(p, alpha=1.0):
    """Flux ``alpha^{-1} w(p) p`` for Euclidean-frame covectors, shape (..., 2)."""
    p = np.asarray(p, dtype=float)
    s2 = np.sum(p * p, axis=-1) / np.asarray(alpha) ** 2
    if np.any(s2 >= 1.0):
        raise DomainError("flux undefined at or beyond the light cone")
    return (p / (np.asarray(alpha) * np.sqrt(1.0 - s2))[..., None])


def gradient_slack(mesh, metric, u):
    """Frame gradients ``C^T Du`` and slack ``1 - |Du|_sigma^2 / alpha^2`` per triangle."""
    g = metric.to_frame(p1_gradient(mesh, u))
    s2 = np.sum(g * g, axis=1) / metric.alpha**2
    return g, 1.0 - s2


def slack(u, metric, mesh):
    return gradient_slack(mesh, metric, u)[1]


def is_feasible(u, metric, mesh, margin=0.0):
    return bool(np.all(slack(u, metric, mesh) >= margin - FEASIBILITY_TOL))


def _require_feasible(sl):
    if np.any(sl < -FEASIBILITY_TOL):
        bad = np.flatnonzero(sl < -FEASIBILITY_TOL)
        raise DomainError(
            f"field is not feasible on {len(bad)} triangle(s); worst slack {sl.min():.3e} "
            f"on triangle {bad[np.argmin(sl[bad])]}")


def energy(u, rho, metric, mesh):
    """Discrete energy ``sum_T |T|_sigma alpha (1 - sqrt(slack_T)) + <rho, u>``.

    The sum is compensated (``math.fsum``) so repeated runs are bit-stable.
    """
    u = check_nodal(mesh, u)
    _, sl = gradient_slack(mesh, metric, u)
    _require_feasible(sl)
    dens = _integrand_from_s2(np.clip(1.0 - sl, 0.0, 1.0), metric.alpha)
    return math.fsum(metric.sigma_areas(mesh) * dens) + pair(rho, u, mesh, metric)


@dataclass(frozen=True)
class TiltField:
    """Per-triangle tilt ``w >= 1`` and the mask of clamped (saturated) triangles."""

    w: np.ndarray
    saturated: np.ndarray

    @property
    def n_saturated(self):
        return int(np.count_nonzero(self.saturated))


def tilt(u, metric, mesh, slack_floor=SLACK_FLOOR):
    """Tilt ``w = 1 / sqrt(max(slack, slack_floor))`` with saturation flags."""
    u = check_nodal(mesh, u)
    _, sl = gradient_slack(mesh, metric, u)
    _require_feasible(sl)
    saturated = sl < slack_floor
    w = 1.0 / np.sqrt(np.maximum(sl, slack_floor))
    return TiltField(w, saturated)


def triangle_flux(mesh, metric, u, margin=INTERIOR_MARGIN):
    """Per-triangle covector ``alpha^{-1} w sigma^{-1} Du`` (Euclidean components)."""
    du = p1_gradient(mesh, u)
    s2 = metric.norm2(du) / metric.alpha**2
    sl = 1.0 - s2
    if np.any(sl < margin):
        bad = np.flatnonzero(sl < margin)
        raise GradientUndefinedError(
            f"gradient undefined: {len(bad)} triangle(s) at or beyond saturation, e.g. {bad[:10].tolist()}",
            triangles=bad)
    w = 1.0 / np.sqrt(sl)
    return (w / metric.alpha)[:, None] * np.einsum("mij,mj->mi", metric.sigma_inv, du)


def flux_vector(mesh, metric, u, margin=INTERIOR_MARGIN):
    """Nodal flux part ``sum_T |T|_sigma q_T . D eta_i`` of the first variation."""
    q = triangle_flux(mesh, metric, u, margin)
    local = metric.sigma_areas(mesh)[:, None] * np.einsum("maj,mj->ma", mesh.basis_grads, q)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


def energy_gradient(u, rho, metric, mesh, margin=INTERIOR_MARGIN):
    """Exact gradient of :func:`energy` with respect to all nodal values.

    Raises
    ------
    GradientUndefinedError
        If some triangle has slack below ``margin``.
    """
    u = check_nodal(mesh, u)
    return flux_vector(mesh, metric, u, margin) + load_vector(rho, mesh, metric)


def energy_hessian(u, metric, mesh, margin=INTERIOR_MARGIN):
    """Sparse Hessian of the Born-Infeld part of the energy."""
    du = p1_gradient(mesh, u)
    sinv_du = np.einsum("mij,mj->mi", metric.sigma_inv, du)
    sl = 1.0 - metric.norm2(du) / metric.alpha**2
    if np.any(sl < margin):
        raise GradientUndefinedError("Hessian undefined near saturation",
                                     triangles=np.flatnonzero(sl < margin))
    w = 1.0 / np.sqrt(sl)
    a = metric.alpha
    weight = (w / a)[:, None, None] * metric.sigma_inv + \
        (w**3 / a**3)[:, None, None] * np.einsum("mi,mj->mij", sinv_du, sinv_du)
    return assemble_weighted_stiffness(mesh, weight * metric.sqrt_det[:, None, None])


def prox_radius(r, beta, alpha, tol=1e-12, max_iter=100):
    """Solve ``(t/alpha)/sqrt(1 - t^2/alpha^2) + beta (t - r) = 0`` for ``t in [0, min(r, alpha))``.

    Newton iteration in the flux variable ``z = s / sqrt(1 - s^2)``,
    ``s = t / alpha``, where the equation reads
    ``z + c z / sqrt(1 + z^2) - c r / alpha = 0`` with ``c = beta alpha``.
    That function is increasing and concave, so Newton started at the upper
    bound ``z = c r / alpha`` decreases monotonically to the root.
    """
    r = np.asarray(r, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), r.shape)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), r.shape)
    c = beta * alpha
    cr = c * r / alpha
    z = cr.copy()
    active = np.flatnonzero(cr > 0)
    for _ in range(max_iter):
        if len(active) == 0:
            break
        za, ca = z[active], c[active]
        q = np.sqrt(1.0 + za * za)
        g = za + ca * za / q - cr[active]
        done = np.abs(g) <= tol * (1.0 + cr[active])
        dg = 1.0 + ca / (q * q * q)
        z[active] = np.where(done, za, np.maximum(za - g / dg, 0.0))
        active = active[~done]
    return alpha * z / np.sqrt(1.0 + z * z)


def prox_frame(q, beta, alpha):
    """Proximal map in a sigma-orthonormal frame, ``q`` of shape (M, 2)."""
    q = np.asarray(q, dtype=float)
    r = np.linalg.norm(q, axis=-1)
    t = prox_radius(r, beta, alpha)
    with np.errstate(invalid="ignore", divide="ignore"):
        factor = np.where(r > 0, t / r, 0.0)
    return q * factor[..., None]


def prox_bi(q, beta, alpha=1.0, sigma=None):
    """Minimizer of ``bi_integrand(p) + beta/2 |p - q|_sigma^2`` over ``|p|_sigma < alpha``."""
    if not beta > 0:
        raise InvalidArgumentError("beta must be positive")
    q = np.asarray(q, dtype=float)
    sinv = np.eye(2) if sigma is None else np.linalg.inv(np.asarray(sigma, dtype=float))
    c = np.linalg.cholesky(sinv)
    qf = c.T @ q
    pf = prox_frame(qf[None, :], beta, alpha)[0]
    return np.linalg.solve(c.T, pf)
