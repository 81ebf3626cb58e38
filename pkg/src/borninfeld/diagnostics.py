"""Numerical audit of a converged solution.

Each function computes one quantity from a nodal field ``u``; the
:func:`run_diagnostics` driver gathers them into a :class:`DiagnosticsReport`
with pass/fail flags.  Thresholds are configuration, not claims: the
continuum constants behind these checks are not explicit.
"""
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse

from . import energy as _energy
from .errors import InvalidArgumentError
from .measures import boundary_distance, pair
from .mesh import check_nodal, distance_graph, graph_distance, p1_gradient
from .solver import weak_residual

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


def _fsum(x):
    return math.fsum(np.asarray(x, dtype=float).ravel())


def exclusion_mask(mesh, atom_locations, radius, points=None):
    """True for triangles (or ``points``) at distance >= ``radius`` from every atom."""
    pts = mesh.centroids if points is None else np.asarray(points, dtype=float)
    keep = np.ones(len(pts), dtype=bool)
    for x in np.asarray(atom_locations, dtype=float).reshape(-1, 2):
        keep &= np.linalg.norm(pts - x, axis=1) >= radius
    return keep


def annulus_mask(mesh, center, r_in, r_out):
    """Triangles whose centroid lies in ``r_in <= |x - center| <= r_out``."""
    d = np.linalg.norm(mesh.centroids - np.asarray(center, dtype=float), axis=1)
    return (d >= r_in) & (d <= r_out)


@dataclass(frozen=True)
class TiltIntegrals:
    tilt_l1: float
    tilt_loglinear: float
    n_saturated: int


def tilt_integrals(u, metric, mesh, exclusion_radius=0.0, atom_locations=(), mask=None):
    """``int w`` over the mesh and ``int w ln(1 + w)`` away from the atoms.

    ``mask`` further restricts the second integral to a set of triangles.
    Clamped triangles contribute their clamped value and are counted.
    """
    t = _energy.tilt(u, metric, mesh)
    area = metric.sigma_areas(mesh)
    keep = exclusion_mask(mesh, atom_locations, exclusion_radius)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    l1 = _fsum(area * t.w)
    loglin = _fsum((area * t.w * np.log1p(t.w))[keep])
    return TiltIntegrals(l1, loglin, t.n_saturated)


@dataclass(frozen=True)
class LightSegmentScan:
    max_ratio: float
    pair: tuple
    flagged: bool
    n_sources: int


def default_scan_sample(mesh, atom_locations=(), exclusion_radius=0.0):
    """Boundary nodes plus the nodes nearest to each atom (or to its exclusion circle)."""
    sample = [mesh.boundary_nodes]
    for x in np.asarray(atom_locations, dtype=float).reshape(-1, 2):
        d = np.linalg.norm(mesh.nodes - x, axis=1)
        if exclusion_radius > 0:
            ring = np.flatnonzero((d >= exclusion_radius) & (d < exclusion_radius + mesh.h_max))
            sample.append(ring)
        else:
            tri, _ = mesh.locate(x)
            sample.append(mesh.triangles[tri[0]])
    return np.unique(np.concatenate(sample))


def light_segment_scan(u, metric, mesh, sample=None, atom_locations=(), exclusion_radius=0.0,
                       flag_threshold=0.99):
    """Largest ``|u(y) - u(x)| / d(x, y)`` with ``d`` the edge-graph distance in ``alpha^2 sigma``.

    Sources are ``sample`` (default: :func:`default_scan_sample`); targets are
    all nodes.  Nodes within ``exclusion_radius`` of an atom are dropped from
    both sides, since near a point charge the graph is asymptotically a light
    cone and the ratio tends to 1 by construction.

    Returns
    -------
    LightSegmentScan
        ``flagged`` is set when the ratio reaches ``flag_threshold``.
    """
    u = check_nodal(mesh, u)
    if sample is None:
        sample = default_scan_sample(mesh, atom_locations, exclusion_radius)
    sample = np.unique(np.asarray(sample, dtype=np.int64))
    allowed = exclusion_mask(mesh, atom_locations, exclusion_radius, points=mesh.nodes) \
        if exclusion_radius > 0 else np.ones(mesh.n_nodes, dtype=bool)
    sample = sample[allowed[sample]]
    if len(sample) == 0:
        raise InvalidArgumentError("light-segment scan needs a non-empty sample")
    graph = distance_graph(mesh, metric)
    best = 0.0
    arg = (int(sample[0]), int(sample[0]))
    for chunk in np.array_split(sample, max(1, len(sample) // 64)):
        d = np.atleast_2d(graph_distance(mesh, metric, chunk, graph=graph))
        du = np.abs(u[None, :] - u[chunk][:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where((d > 0) & allowed[None, :], du / d, 0.0)
        k = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[k] > best:
            best = float(ratio[k])
            arg = (int(chunk[k[0]]), int(k[1]))
    return LightSegmentScan(best, arg, best >= flag_threshold, len(sample))


def singular_set(u, metric, mesh, delta_sing):
    """Triangles with ``|Du|_sigma / alpha > 1 - delta_sing`` and their sigma-area fraction."""
    if not 0 < delta_sing < 1:
        raise InvalidArgumentError("delta_sing must lie in (0, 1)")
    u = check_nodal(mesh, u)
    du = p1_gradient(mesh, u)
    ratio = np.sqrt(metric.norm2(du)) / metric.alpha
    tris = np.flatnonzero(ratio > 1.0 - delta_sing)
    area = metric.sigma_areas(mesh)
    return tris, _fsum(area[tris]) / _fsum(area)


@dataclass(frozen=True)
class BallGrowth:
    center: tuple
    radii: np.ndarray
    mass: np.ndarray
    max_ratio: float
    median_ratio: float
    passed: bool

    @property
    def ratio(self):
        return self.mass / self.radii

    def rows(self):
        return [(float(s), float(i), float(i / s)) for s, i in zip(self.radii, self.mass)]


def ball_growth(u, metric, mesh, center, radii, factor=3.0):
    """Tilt mass ``I(s) = int_{B_s(center)} w`` and the ratio ``I(s) / s``.

    Ball membership uses the centroid distance measured in the local metric.
    Radii beyond the distance from ``center`` to the boundary are dropped
    with a warning.  Passes when ``max I(s)/s <= factor * median``.
    """
    u = check_nodal(mesh, u)
    c = np.asarray(center, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
        raise InvalidArgumentError("radii must be positive and increasing")
    inradius = float(boundary_distance(mesh, c)[0])
    if np.any(radii > inradius):
        warnings.warn(f"ball-growth radii above the inradius {inradius:.4g} at {tuple(c)} are clipped",
                      stacklevel=2)
        radii = radii[radii <= inradius]
    w = _energy.tilt(u, metric, mesh).w
    area = metric.sigma_areas(mesh)
    d = mesh.centroids - c
    dist = np.sqrt(np.einsum("mi,mij,mj->m", d, metric.sigma, d))
    mass = np.array([_fsum((area * w)[dist <= s]) for s in radii])
    ratio = mass / radii if len(radii) else np.zeros(0)
    mx = float(ratio.max()) if len(ratio) else 0.0
    med = float(np.median(ratio)) if len(ratio) else 0.0
    return BallGrowth(tuple(c), radii, mass, mx, med, mx <= factor * med)


def recover_gradient(mesh, u):
    """Area-weighted nodal average of the triangle gradients, shape (N, 2)."""
    g = p1_gradient(mesh, u)
    num = np.zeros((mesh.n_nodes, 2))
    den = np.zeros(mesh.n_nodes)
    for a in range(3):
        np.add.at(num, mesh.triangles[:, a], mesh.areas[:, None] * g)
        np.add.at(den, mesh.triangles[:, a], mesh.areas)
    return num / den[:, None]


def recovered_hessian(mesh, u):
    """Per-triangle symmetric Hessian from the gradient of the recovered gradient."""
    gr = recover_gradient(mesh, u)
    hx = p1_gradient(mesh, gr[:, 0])
    hy = p1_gradient(mesh, gr[:, 1])
    hess = np.stack([hx, hy], axis=1)
    return 0.5 * (hess + np.transpose(hess, (0, 2, 1)))


def quadratic_fit_hessian(mesh, u):
    """Per-triangle Hessian from least-squares quadratic fits on two-ring node patches.

    Each node gets the Hessian of the quadratic that best fits ``u`` on its
    neighbours up to two edges away; triangles average their three vertices.
    Unlike gradient averaging this reproduces quadratics on irregular
    patches, so the recovered Hessian is consistent on any mesh.
    """
    u = check_nodal(mesh, u)
    adj = mesh.adjacency()
    ring2 = ((adj @ adj) + adj).tocsr()
    ring2.setdiag(0)
    ring2.eliminate_zeros()
    counts = np.diff(ring2.indptr)
    k = int(counts.max())
    n = mesh.n_nodes
    # padded neighbour table; padding rows get zero weight
    nbr = np.zeros((n, k), dtype=np.int64)
    valid = np.arange(k)[None, :] < counts[:, None]
    nbr[valid] = ring2.indices
    d = mesh.nodes[nbr] - mesh.nodes[:, None, :]
    d[~valid] = 0.0
    scale = np.sqrt(np.sum(d * d, axis=(1, 2)) / counts)[:, None, None]
    d = d / scale
    x, y = d[..., 0], d[..., 1]
    # fit du = g.d + 1/2 d^T H d (the node value is interpolated exactly)
    basis = np.stack([x, y, 0.5 * x * x, x * y, 0.5 * y * y], axis=-1) * valid[..., None]
    rhs = (u[nbr] - u[:, None]) * valid
    ata = np.einsum("nki,nkj->nij", basis, basis)
    atb = np.einsum("nki,nk->ni", basis, rhs)
    c = np.linalg.solve(ata, atb[..., None])[..., 0] / scale[:, :, 0] ** 2
    hess = np.empty((n, 2, 2))
    hess[:, 0, 0], hess[:, 0, 1], hess[:, 1, 1] = c[:, 2], c[:, 3], c[:, 4]
    hess[:, 1, 0] = hess[:, 0, 1]
    return hess[mesh.triangles].mean(axis=1)


def tilt_gradient(mesh, w):
    """Per-triangle gradient of a piecewise constant field by linear fits on two-ring patches.

    Each node fits ``c + g.(x - x_node)`` to the values of ``w`` at the
    centroids of the triangles touching it or its neighbours; triangles
    average the slopes ``g`` of their three vertices.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (mesh.n_triangles,):
        raise InvalidArgumentError(f"expected {mesh.n_triangles} triangle values, got shape {w.shape}")
    n, m = mesh.n_nodes, mesh.n_triangles
    node_tri = sparse.csr_matrix(
        (np.ones(3 * m), (mesh.triangles.ravel(), np.repeat(np.arange(m), 3))), shape=(n, m))
    patch = ((mesh.adjacency() + sparse.eye(n)) @ node_tri).tocsr()
    patch.sort_indices()
    counts = np.diff(patch.indptr)
    k = int(counts.max())
    tri = np.zeros((n, k), dtype=np.int64)
    valid = np.arange(k)[None, :] < counts[:, None]
    tri[valid] = patch.indices
    d = mesh.centroids[tri] - mesh.nodes[:, None, :]
    d[~valid] = 0.0
    scale = np.sqrt(np.sum(d * d, axis=(1, 2)) / counts)
    d = d / scale[:, None, None]
    basis = np.concatenate([np.ones_like(d[..., :1]), d], axis=-1) * valid[..., None]
    ata = np.einsum("nki,nkj->nij", basis, basis)
    atb = np.einsum("nki,nk->ni", basis, w[tri] * valid)
    # tiny ridge so a degenerate patch on a very coarse mesh stays solvable
    ridge = 1e-12 * np.trace(ata, axis1=1, axis2=2)[:, None, None] * np.eye(3)
    c = np.linalg.solve(ata + ridge, atb[..., None])[..., 0]
    g = c[:, 1:] / scale[:, None]
    return g[mesh.triangles].mean(axis=1)


HESSIAN_METHODS = {
    "tilt-gradient": quadratic_fit_hessian,
    "quadratic-fit": quadratic_fit_hessian,
    "average-then-differentiate": recovered_hessian,
}


@dataclass(frozen=True)
class HessianIntegrals:
    j1: float
    j2: float
    j3: float
    method: str = "tilt-gradient"


def hessian_integrals(u, metric, mesh, exclusion_radius=0.0, atom_locations=(), mask=None,
                      method="tilt-gradient"):
    """``int w|D^2u|^2``, ``int w^3 |D^2u(Du, .)|^2``, ``int w^5 (D^2u(Du, Du))^2`` away from atoms.

    Norms are taken in ``sigma``; ``Du`` is raised to a vector with ``sigma^{-1}``.
    ``w`` and ``Du`` are the per-triangle values of the P1 field.

    Methods
    -------
    ``"tilt-gradient"`` (default)
        J1 from the quadratic-fit Hessian.  J2 and J3 use
        ``D^2u(Du, .) = alpha^2 grad(w) / w^3``, which holds where ``sigma``
        and ``alpha`` are locally constant, with ``grad(w)`` from
        :func:`tilt_gradient`.  This avoids multiplying a recovered Hessian
        by the large powers of ``w`` near a charge.
    ``"quadratic-fit"``
        All three from :func:`quadratic_fit_hessian`.
    ``"average-then-differentiate"``
        All three from :func:`recovered_hessian`.  Kept for comparison; it is
        not consistent on irregular meshes.
    """
    u = check_nodal(mesh, u)
    if method not in HESSIAN_METHODS:
        raise InvalidArgumentError(f"unknown Hessian method {method!r}; use one of {sorted(HESSIAN_METHODS)}")
    hess = HESSIAN_METHODS[method](mesh, u)
    w = _energy.tilt(u, metric, mesh).w
    sinv = metric.sigma_inv
    v = np.einsum("mij,mj->mi", sinv, p1_gradient(mesh, u))
    keep = exclusion_mask(mesh, atom_locations, exclusion_radius)
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    area = metric.sigma_areas(mesh)
    h_sq = np.einsum("mij,mjk,mkl,mli->m", sinv, hess, sinv, hess)
    j1 = _fsum((area * w * h_sq)[keep])
    if method == "tilt-gradient":
        gw = tilt_gradient(mesh, w)
        a4 = np.asarray(metric.alpha, dtype=float) ** 4
        gw_sq = np.einsum("mi,mij,mj->m", gw, sinv, gw)
        gwv = np.einsum("mi,mi->m", gw, v)
        j2 = _fsum((area * a4 * gw_sq / w**3)[keep])
        j3 = _fsum((area * a4 * gwv**2 / w)[keep])
    else:
        hv = np.einsum("mij,mj->mi", hess, v)
        hv_sq = np.einsum("mi,mij,mj->m", hv, sinv, hv)
        hvv = np.einsum("mi,mi->m", hv, v)
        j2 = _fsum((area * w**3 * hv_sq)[keep])
        j3 = _fsum((area * w**5 * hvv**2)[keep])
    return HessianIntegrals(j1, j2, j3, method)


def field_energy(u, rho, metric, mesh):
    """Total field energy ``int (w - 1) dV_sigma - <rho, u>``."""
    w = _energy.tilt(u, metric, mesh).w
    return _fsum(metric.sigma_areas(mesh) * (w - 1.0)) - pair(rho, u, mesh, metric)


def boundary_flux(u, rho, metric, mesh):
    """Sum of the (unzeroed) weak residual over boundary nodes."""
    r = weak_residual(u, rho, metric, mesh, zero_boundary=False)
    return _fsum(r[mesh.boundary_nodes])


def flux_balance(u, rho, metric, mesh):
    """``|boundary flux - rho(Omega)| / (1 + |rho(Omega)|)``."""
    q = rho.total_charge(mesh, metric)
    return abs(boundary_flux(u, rho, metric, mesh) - q) / (1.0 + abs(q))


@dataclass
class DiagnosticsConfig:
    """Thresholds and sampling for :func:`run_diagnostics`.

    ``exclusion_radius`` defaults to ``5 h`` when left as None; ball-growth
    radii default to a geometric sequence from ``4 h`` to half the inradius.
    """

    exclusion_radius: float = None
    delta_sing: float = 0.05
    scan_sample: list = None
    scan_flag: float = 0.99
    ball_centers: list = None
    ball_radii: list = None
    ball_factor: float = 3.0
    max_singular_fraction: float = 0.5
    max_flux_mismatch: float = 1e-8

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown diagnostics keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class DiagnosticsReport:
    tilt_l1: float
    tilt_loglinear: float
    n_saturated: int
    light_segment_max_ratio: float
    offending_pair: tuple
    singular_fraction: float
    ball_growth_table: dict
    hessian_integrals: dict
    field_energy: float
    flux_mismatch: float
    pass_flags: dict = field(default_factory=dict)
    exclusion_radius: float = 0.0
    delta_sing: float = 0.05
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self):
        d = asdict(self)
        d["offending_pair"] = list(self.offending_pair) if self.offending_pair is not None else None
        return d

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(repr(float(obj))) if math.isfinite(obj) else str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def run_diagnostics(u, rho, metric, mesh, config=None):
    """Compute every diagnostic and the pass/fail flags."""
    cfg = config or DiagnosticsConfig()
    h = mesh.h_max
    excl = 5.0 * h if cfg.exclusion_radius is None else float(cfg.exclusion_radius)
    atoms = rho.locations[rho.magnitudes != 0]

    ti = tilt_integrals(u, metric, mesh, excl, atoms)
    scan = light_segment_scan(u, metric, mesh, sample=cfg.scan_sample, atom_locations=atoms,
                              exclusion_radius=excl if len(atoms) else 0.0,
                              flag_threshold=cfg.scan_flag)
    _, frac = singular_set(u, metric, mesh, cfg.delta_sing)

    centers = cfg.ball_centers
    if centers is None:
        centers = [tuple(a) for a in atoms] or [tuple(mesh.centroids[np.argmin(
            np.linalg.norm(mesh.centroids - mesh.nodes.mean(axis=0), axis=1))])]
    table = {}
    ball_ok = True
    for c in centers:
        if cfg.ball_radii is not None:
            radii = np.asarray(cfg.ball_radii, dtype=float)
        else:
            inr = float(boundary_distance(mesh, c)[0])
            radii = np.geomspace(4 * h, max(0.5 * inr, 4 * h * 1.0001), 12)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bg = ball_growth(u, metric, mesh, c, radii, cfg.ball_factor)
        key = f"{c[0]:.17g},{c[1]:.17g}"
        table[key] = bg.rows()
        ball_ok &= bg.passed

    hi = hessian_integrals(u, metric, mesh, excl, atoms)
    fe = field_energy(u, rho, metric, mesh)
    fm = flux_balance(u, rho, metric, mesh)
    flags = {
        "tilt_finite": bool(math.isfinite(ti.tilt_l1) and ti.n_saturated == 0),
        "no_light_segments": bool(not scan.flagged),
        "singular_set_small": bool(frac <= cfg.max_singular_fraction),
        "ball_growth_linear": bool(ball_ok),
        "hessian_finite": bool(all(math.isfinite(x) for x in (hi.j1, hi.j2, hi.j3))),
        "field_energy_finite": bool(math.isfinite(fe)),
        "flux_balance": bool(fm <= cfg.max_flux_mismatch),
    }
    return DiagnosticsReport(
        tilt_l1=ti.tilt_l1, tilt_loglinear=ti.tilt_loglinear, n_saturated=ti.n_saturated,
        light_segment_max_ratio=scan.max_ratio, offending_pair=scan.pair,
        singular_fraction=frac, ball_growth_table=table,
        hessian_integrals={"j1": hi.j1, "j2": hi.j2, "j3": hi.j3, "method": hi.method},
        field_energy=fe, flux_mismatch=fm, pass_flags=flags,
        exclusion_radius=excl, delta_sing=cfg.delta_sing)
