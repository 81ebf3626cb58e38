"""Signed charge measures: point atoms plus a piecewise-constant density.

Densities are stored per triangle as charge per unit sigma-area, so the
Euclidean density on triangle ``T`` is ``f_T * sqrt(det sigma_T)``.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, MollificationRadiusError
from .mesh import check_nodal

# 7-point degree-5 rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_DUNAVANT5_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_DUNAVANT5_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)
# target triangles per chunk when convolving a density
_CHUNK = 2048


@dataclass(frozen=True)
class ChargeMeasure:
    """Atoms ``sum a_i delta_{x_i}`` plus an optional per-triangle density.

    Coincident atoms are merged on construction.
    """

    locations: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    magnitudes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density: np.ndarray = None

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        mag = np.asarray(self.magnitudes, dtype=float).reshape(-1)
        if len(loc) != len(mag):
            raise InvalidArgumentError("one magnitude per atom location required")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(mag))):
            raise InvalidArgumentError("atoms must be finite")
        if len(loc):
            uniq, inv = np.unique(loc, axis=0, return_inverse=True)
            if len(uniq) < len(loc):
                merged = np.zeros(len(uniq))
                np.add.at(merged, inv.ravel(), mag)
                loc, mag = uniq, merged
        loc.setflags(write=False)
        mag.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "magnitudes", mag)
        if self.density is not None:
            f = np.array(self.density, dtype=float)
            if f.ndim != 1 or not np.all(np.isfinite(f)):
                raise InvalidArgumentError("density must be a finite 1D per-triangle array")
            f.setflags(write=False)
            object.__setattr__(self, "density", f)

    @classmethod
    def atoms(cls, *atoms):
        """``ChargeMeasure.atoms((x, y, a), ...)``."""
        arr = np.asarray(atoms, dtype=float).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2])

    @classmethod
    def from_density(cls, density):
        return cls(density=density)

    @property
    def n_atoms(self):
        return len(self.magnitudes)

    def has_atoms(self):
        return bool(np.any(self.magnitudes != 0.0))

    def is_zero(self):
        return not self.has_atoms() and (self.density is None or not np.any(self.density))

    def _check(self, mesh):
        if self.density is not None and len(self.density) != mesh.n_triangles:
            raise InvalidArgumentError(
                f"density has {len(self.density)} entries, mesh has {mesh.n_triangles} triangles")

    def scaled(self, c):
        return ChargeMeasure(self.locations, c * self.magnitudes,
                             None if self.density is None else c * self.density)

    def __neg__(self):
        return self.scaled(-1.0)

    def __add__(self, other):
        d = self.density if other.density is None else (
            other.density if self.density is None else self.density + other.density)
        return ChargeMeasure(np.vstack([self.locations, other.locations]),
                             np.concatenate([self.magnitudes, other.magnitudes]), d)

    def total_charge(self, mesh, metric):
        """Signed mass ``rho(Omega)``."""
        self._check(mesh)
        q = math.fsum(self.magnitudes)
        if self.density is not None:
            q += math.fsum(metric.sigma_areas(mesh) * self.density)
        return q


def total_variation(mu, mesh, metric):
    """Total variation ``sum |a_i| + sum_T area_sigma(T) |f_T|``."""
    mu._check(mesh)
    tv = math.fsum(np.abs(mu.magnitudes))
    if mu.density is not None:
        tv += math.fsum(metric.sigma_areas(mesh) * np.abs(mu.density))
    return tv


def _bump(r2):
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=None)
def _bump_mass():
    val, _ = integrate.quad(lambda r: r * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13)
    return 2.0 * math.pi * val


@dataclass(frozen=True)
class MollifierKernel:
    """Normalized bump ``C exp(-1/(1-|x|^2))`` on the unit disc, scaled to radius ``epsilon``."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")

    @staticmethod
    def profile(x):
        """Unit-mass profile on the unit disc; ``x`` has shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        return _bump(np.sum(x * x, axis=-1)) / _bump_mass()

    def __call__(self, x):
        eps = self.epsilon
        return self.profile(np.asarray(x) / eps) / (eps * eps)


def _quadrature_points(mesh):
    p = mesh.nodes[mesh.triangles]  # (M, 3, 2)
    return np.einsum("qa,maj->mqj", _DUNAVANT5_BARY, p)


def mollify(mu, kernel, mesh, metric=None):
    """Replace ``mu`` by its convolution with the kernel, as a pure density.

    Atoms become bumps ``a_i Phi_eps(. - x_i)`` averaged over each triangle
    with a degree-5 rule; an existing density is convolved through the same
    quadrature.  Mass that the kernel would push outside the mesh is lost.

    Raises
    ------
    MollificationRadiusError
        If some atom is within ``epsilon`` of the boundary.
    """
    mu._check(mesh)
    eps = kernel.epsilon
    if metric is None:
        sqrt_det = np.ones(mesh.n_triangles)
    else:
        sqrt_det = metric.sqrt_det
    if mu.n_atoms:
        dist = boundary_distance(mesh, mu.locations)
        for k, d in enumerate(dist):
            if d <= eps:
                x, y = mu.locations[k]
                raise MollificationRadiusError(
                    f"atom {k} at ({x:g}, {y:g}) is {d:.4g} from the boundary, "
                    f"not more than epsilon={eps:g}", atom_index=k)

    qp = _quadrature_points(mesh)  # (M, 7, 2)
    tree = cKDTree(mesh.centroids)
    reach = eps + mesh.h_max
    euclid = np.zeros(mesh.n_triangles)
    for x, a in zip(mu.locations, mu.magnitudes):
        if a == 0.0:
            continue
        idx = np.asarray(tree.query_ball_point(x, reach), dtype=np.int64)
        if len(idx) == 0:
            continue
        vals = kernel(qp[idx] - x) @ _DUNAVANT5_W
        euclid[idx] += a * vals
    if mu.density is not None and np.any(mu.density):
        src = mu.density * sqrt_det * mesh.areas  # charge carried by each triangle
        nz = np.flatnonzero(src)
        src_tree = cKDTree(mesh.centroids[nz])
        # mean over target T of sum over sources T' of charge(T') Phi(x - c_T'),
        # evaluated over (target, source) pairs in bounded-memory chunks
        for start in range(0, mesh.n_triangles, _CHUNK):
            stop = min(start + _CHUNK, mesh.n_triangles)
            near = cKDTree(mesh.centroids[start:stop]).sparse_distance_matrix(
                src_tree, reach, output_type="ndarray")
            t, s = start + near["i"], nz[near["j"]]
            vals = kernel(qp[t] - mesh.centroids[s][:, None, :]) @ _DUNAVANT5_W
            euclid[start:stop] += np.bincount(t - start, src[s] * vals, minlength=stop - start)
    return ChargeMeasure(density=euclid / sqrt_det)


def boundary_distance(mesh, points):
    """Euclidean distance from each point to the polygonal boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    out = np.empty(len(pts))
    for k, x in enumerate(pts):
        t = np.clip(np.einsum("ij,ij->i", x - a, ab) / L2, 0.0, 1.0)
        out[k] = np.min(np.linalg.norm(a + t[:, None] * ab - x, axis=1))
    return out


def load_vector(mu, mesh, metric):
    r"""Nodal load :math:`L_i = \sum_k a_k \eta_i(x_k) + \sum_T |T|_\sigma f_T \bar\eta_i^T`.

    Atoms are paired with the hat functions by barycentric point evaluation.
    """
    mu._check(mesh)
    L = np.zeros(mesh.n_nodes)
    if mu.n_atoms:
        tri, bary = mesh.locate(mu.locations)
        np.add.at(L, mesh.triangles[tri].ravel(), (bary * mu.magnitudes[:, None]).ravel())
    if mu.density is not None:
        per_node = metric.sigma_areas(mesh) * mu.density / 3.0
        np.add.at(L, mesh.triangles.ravel(), np.repeat(per_node, 3))
    return L


def pair(mu, psi, mesh, metric):
    """The pairing ``<mu, psi>`` of a measure with a P1 field."""
    psi = check_nodal(mesh, psi)
    return math.fsum(load_vector(mu, mesh, metric) * psi)


def preset_density(mesh, name, *params, metric=None):
    """Named density presets: ``uniform(value)`` and ``gaussian(x0, y0, s, mass)``.

    The gaussian carries the given total mass in the flat Euclidean sense.
    """
    x, y = mesh.centroids.T
    sqrt_det = np.ones(mesh.n_triangles) if metric is None else metric.sqrt_det
    if name == "uniform":
        value = float(params[0]) if params else 1.0
        return np.full(mesh.n_triangles, value)
    if name == "gaussian":
        x0, y0, s, mass = map(float, params)
        if s <= 0:
            raise InvalidArgumentError("gaussian width must be positive")
        g = mass * np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (2 * s * s)) / (2 * math.pi * s * s)
        return g / sqrt_det
    raise InvalidArgumentError(f"unknown density preset {name!r}")
