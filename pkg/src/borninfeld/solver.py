"""Minimization of the discrete Born-Infeld energy over spacelike P1 fields.

Three drivers:

* :func:`solve_admm` -- alternating direction method on the splitting
  ``p = Du`` (per-triangle prox + one fixed SPD linear system), followed by
  a damped Newton polish once the iterate is close.  Handles atoms.
* :func:`solve_picard` -- frozen-coefficient iteration for density sources.
* :func:`solve_continuation` -- mollify the source at decreasing radii,
  warm-starting each stage, and finish with the raw measure.
* :func:`solve_conic` -- the same discrete problem written as a second-order
  cone program and handed to an interior-point solver.  ``solve_admm`` uses
  it as a polish when the minimizer touches the constraint on some triangles
  (Newton cannot converge there since the tilt blows up).
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace

import clarabel
import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import energy as _energy
from .errors import (ConvergenceError, GradientUndefinedError, InvalidArgumentError,
                     InvalidProblemError, PicardStallError)
from .measures import MollifierKernel, boundary_distance, load_vector, mollify, total_variation
from .mesh import assemble_weighted_stiffness, check_nodal, p1_gradient

logger = logging.getLogger(__name__)

NEWTON_SLACK_FLOOR = 1e-12
# Newton gives up when the residual has not halved in this many steps
NEWTON_STALL = 8


@dataclass(frozen=True)
class Problem:
    """Dirichlet data ``(mesh, metric, rho, phi)``.

    ``phi`` is a full nodal field; only its boundary values are imposed but
    it also serves as the default initial guess.
    """

    mesh: object
    metric: object
    rho: object
    phi: np.ndarray
    margin: float = 0.01

    def __post_init__(self):
        phi = check_nodal(self.mesh, self.phi).copy()
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        if len(self.metric) != self.mesh.n_triangles:
            raise InvalidProblemError("metric size does not match mesh")
        self.rho._check(self.mesh)
        self.check_boundary_data()

    def boundary_triangles(self):
        on_bdry = np.zeros(self.mesh.n_nodes, dtype=bool)
        on_bdry[self.mesh.boundary_nodes] = True
        return np.flatnonzero(on_bdry[self.mesh.triangles].any(axis=1))

    def check_boundary_data(self):
        t = self.boundary_triangles()
        du = p1_gradient(self.mesh, self.phi)[t]
        ratio = np.sqrt(np.einsum("mi,mij,mj->m", du, self.metric.sigma_inv[t], du)) / self.metric.alpha[t]
        worst = float(ratio.max()) if len(ratio) else 0.0
        if worst > 1.0 - self.margin:
            raise InvalidProblemError(
                f"boundary data not strictly spacelike: |D phi|_sigma / alpha = {worst:.4g} "
                f"exceeds {1.0 - self.margin:.4g} on triangle {int(t[np.argmax(ratio)])}")

    def with_rho(self, rho):
        return replace(self, rho=rho)

    def negated(self):
        return replace(self, rho=-self.rho, phi=-self.phi)


@dataclass
class SolverConfig:
    """Tunables shared by all drivers.

    ``eps_schedule`` overrides the default continuation radii
    (8h, 4h, 2h with ``h`` the mesh's longest edge).
    """

    beta: float = 1.0
    adapt_beta: bool = True
    balance: float = 10.0
    relaxation: float = 1.0
    max_beta_changes: int = 10
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iters: int = 50000
    polish: bool = True
    polish_switch: float = 1e-2
    polish_every: int = 200
    conic_polish: bool = True
    conic_tol: float = 1e-8
    newton_max_iters: int = 60
    eps_max_factor: float = 8.0
    eps_min_factor: float = 2.0
    eps_ratio: float = 0.5
    eps_schedule: tuple = None
    linear_tol: float = 1e-10
    theta: float = 0.5
    picard_tol: float = 1e-9
    picard_max_iters: int = 2000
    seed: int = 0
    log_path: str = None
    log_every: int = 1

    def __post_init__(self):
        for name in ("beta", "tol_primal", "tol_dual", "max_iters", "polish_switch",
                     "eps_max_factor", "eps_min_factor", "linear_tol", "picard_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not 0 < self.theta <= 1:
            raise InvalidArgumentError("theta must lie in (0, 1]")
        if not 0 < self.eps_ratio < 1:
            raise InvalidArgumentError("eps_ratio must lie in (0, 1)")
        if self.eps_min_factor < 1:
            raise InvalidArgumentError("eps_min must be at least h")

    def schedule(self, h):
        if self.eps_schedule is not None:
            eps = [float(e) for e in self.eps_schedule]
            if any(e < h for e in eps):
                raise InvalidArgumentError("continuation radii must be >= h")
            return eps
        out = []
        e = self.eps_max_factor * h
        while e >= self.eps_min_factor * h * (1 - 1e-12):
            out.append(e)
            e *= self.eps_ratio
        return out


@dataclass(frozen=True)
class SolveResult:
    u: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    energy_value: float
    weak_residual: float = float("nan")
    newton_iterations: int = 0
    continuation_trace: tuple = ()
    wall_time: float = 0.0
    method: str = "admm"
    residual_trace: tuple = field(default=(), repr=False)


class _IterLog:
    def __init__(self, path, every):
        self.fh = open(path, "a") if path else None
        self.every = every

    def write(self, k, primal, dual, energy):
        if self.fh is not None and k % self.every == 0:
            self.fh.write(f"{k}, {primal:.17g}, {dual:.17g}, {energy:.17g}\n")

    def close(self):
        if self.fh is not None:
            self.fh.close()


def weak_residual(u, rho, metric, mesh, zero_boundary=True, margin=0.0):
    r"""Nodal residual :math:`R_i = \sum_T |T|_\sigma q_T \cdot D\eta_i + L_i` of the weak form.

    Boundary entries are zeroed unless ``zero_boundary`` is False.
    """
    u = check_nodal(mesh, u)
    r = _energy.flux_vector(mesh, metric, u, margin=margin) + load_vector(rho, mesh, metric)
    if zero_boundary:
        r[mesh.boundary_nodes] = 0.0
    return r


def residual_scale(problem):
    return 1.0 + total_variation(problem.rho, problem.mesh, problem.metric)


class _Dirichlet:
    """Factorization of the interior block of a stiffness matrix."""

    def __init__(self, mesh, k):
        self.mesh = mesh
        self.I = mesh.interior_nodes
        self.B = mesh.boundary_nodes
        k = k.tocsr()
        self.kib = k[self.I][:, self.B]
        self.lu = splinalg.splu(k[self.I][:, self.I].tocsc())

    def solve(self, rhs, phi):
        """Solve ``K u = rhs`` on interior rows with ``u = phi`` on the boundary."""
        u = np.array(phi, dtype=float)
        if len(self.I):
            u[self.I] = self.lu.solve(rhs[self.I] - self.kib @ phi[self.B])
        return u


def _frame_ops(mesh, metric):
    # frame gradient operator G_T = C_T^T D eta (M, 3, 2) and sigma-areas
    g = np.einsum("mji,maj->mai", metric.frame, mesh.basis_grads)
    return g, metric.sigma_areas(mesh)


def _frame_grad(mesh, g, u):
    return np.einsum("mai,ma->mi", g, u[mesh.triangles])


def _scatter(mesh, g, a, vec):
    local = a[:, None] * np.einsum("mai,mi->ma", g, vec)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


def _newton_polish(problem, u, tol, max_iters, margin=1e-300):
    """Damped Newton on the interior nodes from a strictly feasible start.

    Returns ``(u, iterations, max interior residual)``; ``u`` is unchanged if
    the start is not strictly feasible.
    """
    mesh, metric, rho = problem.mesh, problem.metric, problem.rho
    I = mesh.interior_nodes
    L = load_vector(rho, mesh, metric)
    sl = _energy.slack(u, metric, mesh)
    if np.any(sl <= 0):
        return u, 0, math.inf

    def merit(v):
        s = _energy.slack(v, metric, mesh)
        if np.any(s <= 0):
            return math.inf
        dens = _energy._integrand_from_s2(1.0 - s, metric.alpha)
        return math.fsum(metric.sigma_areas(mesh) * dens) + math.fsum(L * v)

    res = math.inf
    f0 = merit(u)
    best, best_at = math.inf, 0
    for it in range(1, max_iters + 1):
        grad = _energy.flux_vector(mesh, metric, u, margin=margin) + L
        res = float(np.max(np.abs(grad[I]))) if len(I) else 0.0
        min_slack = float(_energy.slack(u, metric, mesh).min())
        logger.debug("newton %d: residual %.3e, min slack %.3e", it, res, min_slack)
        if res <= tol:
            return u, it - 1, res
        if min_slack < NEWTON_SLACK_FLOOR:
            # minimizer is (numerically) on the light cone somewhere; Newton cannot get there
            return u, it, res
        if res < 0.5 * best:
            best, best_at = res, it
        elif it - best_at >= NEWTON_STALL:
            return u, it, res
        hess = _energy.energy_hessian(u, metric, mesh, margin=margin).tocsr()
        hii = hess[I][:, I].tocsc()
        step = np.zeros_like(u)
        step[I] = -splinalg.spsolve(hii, grad[I])
        decrement = -float(grad[I] @ step[I])
        t = 1.0
        while True:
            trial = u + t * step
            f1 = merit(trial)
            if f1 <= f0 - 1e-4 * t * decrement or (
                    math.isfinite(f1) and abs(f1 - f0) <= 1e-14 * (1 + abs(f0))):
                break
            t *= 0.5
            if t < 1e-12:
                return u, it, res
        u, f0 = trial, f1
    grad = _energy.flux_vector(mesh, metric, u, margin=margin) + L
    res = float(np.max(np.abs(grad[I]))) if len(I) else 0.0
    return u, max_iters, res


def solve_admm(problem, config=None, u0=None, lam0=None):
    """Minimize the discrete energy by ADMM on the splitting ``p = Du``.

    The u-step solves one SPD system (factorized once; a change of the
    penalty only rescales the right-hand side), the p-step is the
    per-triangle prox, and the scaled dual is updated by ``Du - p``.  Once
    both residuals drop below ``config.polish_switch`` a damped Newton polish
    is attempted; if it reaches the weak-residual target the run stops.

    Residuals: primal ``max_T |C^T Du - p|``, dual ``beta max_T |p_k - p_{k-1}|``.

    Raises
    ------
    ConvergenceError
        When neither ADMM nor the polish converge within ``max_iters``.
    """
    cfg = config or SolverConfig()
    t_start = time.perf_counter()
    mesh, metric, rho = problem.mesh, problem.metric, problem.rho
    phi = problem.phi
    g, a = _frame_ops(mesh, metric)
    k1 = assemble_weighted_stiffness(mesh, metric.sigma_inv * metric.sqrt_det[:, None, None])
    lin = _Dirichlet(mesh, k1)
    L = load_vector(rho, mesh, metric)
    scale = residual_scale(problem)
    target = cfg.tol_primal * scale

    u = np.array(phi if u0 is None else check_nodal(mesh, u0), dtype=float)
    u[mesh.boundary_nodes] = phi[mesh.boundary_nodes]
    du = _frame_grad(mesh, g, u)
    beta = cfg.beta
    p = _energy.prox_frame(du, beta, metric.alpha)
    lam = np.zeros_like(du) if lam0 is None else np.array(lam0, dtype=float)
    changes = 0
    trace = []
    log = _IterLog(cfg.log_path, cfg.log_every)
    primal = dual = math.inf
    polish_tried_at = -cfg.polish_every  # first attempt as soon as residuals allow
    newton_its = 0
    conic_tried = False
    polished = None
    try:
        for k in range(1, cfg.max_iters + 1):
            rhs = _scatter(mesh, g, a, p - lam) - L / beta
            u = lin.solve(rhs, phi)
            du = _frame_grad(mesh, g, u)
            p_old = p
            # over-relaxation: mix the new gradient with the previous split variable
            dh = cfg.relaxation * du + (1.0 - cfg.relaxation) * p_old
            p = _energy.prox_frame(dh + lam, beta, metric.alpha)
            lam = lam + dh - p
            r = du - p
            primal = float(np.max(np.linalg.norm(r, axis=1)))
            dual = beta * float(np.max(np.linalg.norm(p - p_old, axis=1)))
            trace.append((primal, dual))
            if cfg.log_path:
                log.write(k, primal, dual, _admm_energy(mesh, metric, a, p, L, u))
            if primal <= cfg.tol_primal and dual <= cfg.tol_dual:
                break
            if cfg.polish and primal <= cfg.polish_switch and dual <= cfg.polish_switch \
                    and k - polish_tried_at >= cfg.polish_every:
                polish_tried_at = k
                start = _project_feasible(problem, u, margin=1e-8)
                v, its, res = _newton_polish(problem, start, 1e-3 * target, cfg.newton_max_iters)
                newton_its += its
                if res <= target:
                    logger.info("newton polish converged after %d ADMM + %d Newton iterations", k, its)
                    u = v
                    polished = "newton"
                    break
                if cfg.conic_polish and not conic_tried:
                    conic_tried = True
                    sol = _conic_solve(problem, cfg.conic_tol)
                    if sol.ok:
                        logger.info("conic polish after %d ADMM iterations (%s, %d IPM iterations)",
                                    k, sol.status, sol.iterations)
                        u = sol.u
                        polished = "conic"
                        primal, dual = sol.primal, sol.dual
                        # an interior minimizer is reached quadratically from here
                        v, its, res = _newton_polish(problem, u, 1e-3 * target, cfg.newton_max_iters)
                        newton_its += its
                        if res <= target:
                            u = v
                            polished = "conic+newton"
                        break
            if cfg.adapt_beta and changes < cfg.max_beta_changes and k % 10 == 0:
                if primal > cfg.balance * dual:
                    beta *= 2.0
                    lam = lam / 2.0
                    changes += 1
                elif dual > cfg.balance * primal:
                    beta /= 2.0
                    lam = lam * 2.0
                    changes += 1
        else:
            raise ConvergenceError(
                f"ADMM did not converge in {cfg.max_iters} iterations "
                f"(primal {primal:.3e}, dual {dual:.3e})", trace=trace,
                last_iterate=_project_feasible(problem, u))
    finally:
        log.close()

    # final iterate: u may violate the constraint by O(primal); pull it back if so
    if not _energy.is_feasible(u, metric, mesh):
        u = _project_feasible(problem, u)
    if cfg.polish and polished is None:
        v, its, res = _newton_polish(problem, u, 1e-3 * target, cfg.newton_max_iters)
        if res <= target:
            u = v
            polished = "newton"
        newton_its += its
    wr = _weak_residual_max(problem, u)
    e = _energy.energy(u, rho, metric, mesh)
    logger.info("admm: %d iterations, primal %.2e dual %.2e weak residual %.2e",
                len(trace), primal, dual, wr)
    return SolveResult(u=u, iterations=len(trace), primal_residual=primal, dual_residual=dual,
                       energy_value=e, weak_residual=wr, newton_iterations=newton_its,
                       wall_time=time.perf_counter() - t_start,
                       method="admm" if polished is None else f"admm+{polished}",
                       residual_trace=tuple(trace))


@dataclass(frozen=True)
class _ConicSolution:
    u: np.ndarray
    status: str
    iterations: int
    primal: float
    dual: float
    ok: bool


def _conic_solve(problem, tol=1e-10, max_iter=300):
    """Interior-point solve of the discrete energy as a second-order cone program.

    Variables are the interior nodal values and one ``z_T`` per triangle; the
    integrand is ``alpha (1 - z_T)`` subject to ``|(z_T, C^T Du_T / alpha)| <= 1``,
    whose optimum has ``z_T = sqrt(1 - |Du_T|_sigma^2 / alpha^2)``.
    """
    mesh, metric = problem.mesh, problem.metric
    g, area = _frame_ops(mesh, metric)
    m = mesh.n_triangles
    inner = mesh.interior_nodes
    n_in = len(inner)
    col = np.full(mesh.n_nodes, -1, dtype=np.int64)
    col[inner] = np.arange(n_in)
    alpha = metric.alpha
    tri = np.arange(m)
    # cone rows per triangle: [1, z, q1, q2] with s = b - A x
    b = np.zeros(4 * m)
    b[0::4] = 1.0
    rows, cols, vals = [4 * tri + 1], [n_in + tri], [-np.ones(m)]
    for loc in range(3):
        nodes = mesh.triangles[:, loc]
        c = col[nodes]
        free = c >= 0
        for i in range(2):
            coef = g[:, loc, i] / alpha
            r = 4 * tri + 2 + i
            rows.append(r[free])
            cols.append(c[free])
            vals.append(-coef[free])
            np.add.at(b, r[~free], coef[~free] * problem.phi[nodes[~free]])
    a_mat = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(4 * m, n_in + m))
    load = load_vector(problem.rho, mesh, metric)
    q = np.concatenate([load[inner], -area * alpha])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = tol
    settings.max_iter = max_iter
    cones = [clarabel.SecondOrderConeT(4)] * m
    sol = clarabel.DefaultSolver(sparse.csc_matrix((n_in + m, n_in + m)), q, a_mat, b, cones,
                                 settings).solve()
    status = str(sol.status)
    u = np.array(problem.phi, dtype=float)
    u[inner] = np.asarray(sol.x)[:n_in]
    ok = status in ("Solved", "AlmostSolved")
    if ok and not _energy.is_feasible(u, metric, mesh):
        u = _project_feasible(problem, u)
    return _ConicSolution(u, status, int(sol.iterations), float(sol.r_prim), float(sol.r_dual), ok)


def solve_conic(problem, config=None):
    """Minimize the discrete energy with a conic interior-point method.

    Robust when the discrete minimizer is saturated (``|Du|_sigma = alpha``)
    on some triangles.  ``primal_residual`` and ``dual_residual`` are the
    interior-point solver's own scaled residuals.

    Raises
    ------
    ConvergenceError
        If the interior-point method does not report a solution.
    """
    cfg = config or SolverConfig()
    t_start = time.perf_counter()
    sol = _conic_solve(problem, cfg.conic_tol)
    if not sol.ok:
        raise ConvergenceError(f"conic solver stopped with status {sol.status}")
    e = _energy.energy(sol.u, problem.rho, problem.metric, problem.mesh)
    return SolveResult(u=sol.u, iterations=sol.iterations, primal_residual=sol.primal,
                       dual_residual=sol.dual, energy_value=e,
                       weak_residual=_weak_residual_max(problem, sol.u),
                       wall_time=time.perf_counter() - t_start, method="conic")


def _admm_energy(mesh, metric, a, p, L, u):
    s2 = np.sum(p * p, axis=1) / metric.alpha**2
    return math.fsum(a * _energy._integrand_from_s2(np.minimum(s2, 1.0), metric.alpha)) + math.fsum(L * u)


def _weak_residual_max(problem, u):
    try:
        r = weak_residual(u, problem.rho, problem.metric, problem.mesh)
    except GradientUndefinedError:
        return math.inf
    return float(np.max(np.abs(r)))


def _project_feasible(problem, u, margin=1e-15):
    """Largest ``phi + t (u - phi)``, ``t in [0, 1]``, with slack at least ``margin`` everywhere."""
    mesh, metric, phi = problem.mesh, problem.metric, problem.phi
    if _energy.is_feasible(u, metric, mesh, margin=margin):
        return u
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _energy.is_feasible(phi + mid * (u - phi), metric, mesh, margin=margin):
            lo = mid
        else:
            hi = mid
    return phi + lo * (u - phi)


def solve_picard(problem, config=None, u0=None):
    """Frozen-coefficient iteration ``div_sigma(alpha^{-1} w_v Du) = rho``.

    Each step solves the linear problem with the tilt of the previous iterate
    ``v`` frozen, then relaxes ``v <- (1 - theta) v + theta u``.  If the
    relaxed step leaves the ``(1 - margin)`` spacelike ball on some triangle,
    the step length is halved until it does not.

    Near the fixed point the damped map behaves like ``I - theta K^{-1} H``
    with ``K`` the frozen stiffness and ``H`` the true Hessian; the spectrum
    of ``K^{-1} H`` lies in ``[1, max w^2]``, so the iteration only settles
    for ``theta < 2 / max w^2``.  Strong sources therefore need small
    ``theta`` or, better, :func:`solve_admm`.

    Raises
    ------
    InvalidProblemError
        If ``rho`` has atoms.
    PicardStallError
        If the energy increases on three consecutive steps.
    """
    cfg = config or SolverConfig()
    if problem.rho.has_atoms():
        raise InvalidProblemError("Picard iteration needs a density-only source; mollify atoms first")
    t_start = time.perf_counter()
    mesh, metric, rho = problem.mesh, problem.metric, problem.rho
    phi = problem.phi
    L = load_vector(rho, mesh, metric)
    ceiling = 1.0 - (1.0 - problem.margin) ** 2  # minimum admissible slack
    v = np.array(phi if u0 is None else u0, dtype=float)
    v[mesh.boundary_nodes] = phi[mesh.boundary_nodes]
    if np.any(_energy.slack(v, metric, mesh) < ceiling):
        v = phi.copy()
    e_prev = _energy.energy(v, rho, metric, mesh)
    increases = 0
    diff = math.inf
    trace = []
    for k in range(1, cfg.picard_max_iters + 1):
        w = _energy.tilt(v, metric, mesh).w
        weight = (w / metric.alpha * metric.sqrt_det)[:, None, None] * metric.sigma_inv
        lin = _Dirichlet(mesh, assemble_weighted_stiffness(mesh, weight))
        u = lin.solve(-L, phi)
        theta = cfg.theta
        while True:
            cand = v + theta * (u - v)
            if np.all(_energy.slack(cand, metric, mesh) >= ceiling - _energy.FEASIBILITY_TOL):
                break
            theta *= 0.5
            if theta < 1e-8:
                raise PicardStallError("Picard step cannot stay inside the spacelike ball; use ADMM",
                                       trace=trace)
        diff = float(np.max(np.abs(cand - v)))
        e = _energy.energy(cand, rho, metric, mesh)
        trace.append((diff, e))
        increases = increases + 1 if e > e_prev + 1e-14 * (1 + abs(e_prev)) else 0
        if increases >= 3:
            wmax = float(np.max(_energy.tilt(cand, metric, mesh).w))
            raise PicardStallError(
                "energy increased on three consecutive Picard steps; use solve_admm or "
                f"theta below 2/max(w^2) = {2.0 / wmax**2:.3g}", trace=trace)
        v, e_prev = cand, e
        if diff <= cfg.picard_tol:
            break
    else:
        raise ConvergenceError(f"Picard did not converge in {cfg.picard_max_iters} steps "
                               f"(last change {diff:.3e})", trace=trace)
    wr = _weak_residual_max(problem, v)
    return SolveResult(u=v, iterations=len(trace), primal_residual=0.0, dual_residual=diff,
                       energy_value=e_prev, weak_residual=wr,
                       wall_time=time.perf_counter() - t_start, method="picard",
                       residual_trace=tuple(trace))


def solve_continuation(problem, config=None, u0=None):
    """Solve with mollified sources at decreasing radii, then with the raw measure.

    Every stage is :func:`solve_admm` warm-started from the previous one.
    ``continuation_trace`` holds ``(epsilon, iterations, energy)`` per stage,
    with ``epsilon = 0`` for the final unmollified solve.
    """
    cfg = config or SolverConfig()
    t_start = time.perf_counter()
    mesh = problem.mesh
    u = u0
    stages = []
    total = 0
    newton = 0
    for eps in cfg.schedule(mesh.h_max):
        try:
            rho_eps = mollify(problem.rho, MollifierKernel(eps), mesh, problem.metric)
            res = solve_admm(problem.with_rho(rho_eps), cfg, u0=u)
        except Exception as exc:
            exc.args = (f"[continuation stage eps={eps:.4g}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        u = res.u
        total += res.iterations
        newton += res.newton_iterations
        stages.append((eps, res.iterations, res.energy_value))
        logger.info("continuation stage eps=%.4g: %d iterations, energy %.10g", eps, res.iterations,
                    res.energy_value)
    try:
        res = solve_admm(problem, cfg, u0=u)
    except Exception as exc:
        exc.args = (f"[continuation final stage eps=0] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    stages.append((0.0, res.iterations, res.energy_value))
    return replace(res, iterations=total + res.iterations,
                   newton_iterations=newton + res.newton_iterations,
                   continuation_trace=tuple(stages), wall_time=time.perf_counter() - t_start,
                   method="continuation")


def random_feasible_field(problem, rng, amplitude=0.5, margin=0.05):
    """A smooth random field with the boundary data and slack at least ``margin`` everywhere.

    The perturbation of ``phi`` is a random affine-plus-oscillating profile
    times the distance to the boundary, shrunk until it is feasible.
    """
    mesh, metric = problem.mesh, problem.metric
    x = mesh.nodes - mesh.nodes.mean(axis=0)
    x = x / np.max(np.abs(x))
    c = rng.standard_normal(4)
    bubble = boundary_distance(mesh, mesh.nodes)
    shape = c[0] + c[1] * x[:, 0] + c[2] * x[:, 1] + c[3] * np.cos(3 * x[:, 0] * x[:, 1])
    v = problem.phi + amplitude * bubble * shape
    v[mesh.boundary_nodes] = problem.phi[mesh.boundary_nodes]
    t = 1.0
    while t > 1e-12:
        cand = problem.phi + t * (v - problem.phi)
        if np.all(_energy.slack(cand, metric, mesh) >= margin):
            return cand
        t *= 0.7
    return problem.phi.copy()
