"""Born-Infeld electrostatics on P1 triangle meshes with measure-valued charges.

The static problem: minimize over spacelike potentials ``u`` (``|Du|_sigma < alpha``)
with Dirichlet data the energy

    I(u) = sum_T |T|_sigma alpha (1 - sqrt(1 - |Du|_sigma^2 / alpha^2)) + <rho, u>

where ``rho`` is a signed measure made of point charges and a density.
"""
from .diagnostics import (DiagnosticsConfig, DiagnosticsReport, ball_growth, field_energy,
                          flux_balance, hessian_integrals, light_segment_scan, run_diagnostics,
                          singular_set, tilt_gradient, tilt_integrals)
from .energy import bi_integrand, energy_gradient, prox_bi, tilt
from .errors import (BornInfeldError, BundleLoadError, ConfigError, ConvergenceError, DomainError,
                     GradientUndefinedError, InvalidArgumentError, InvalidGeometryError,
                     InvalidProblemError, MollificationRadiusError, PicardStallError,
                     PointLocationError)
from .measures import (ChargeMeasure, MollifierKernel, load_vector, mollify, pair,
                       total_variation)
from .mesh import (Mesh, MetricField, assemble_weighted_stiffness, graph_distance, p1_gradient,
                   triangulate_disk, triangulate_polygon)
from .oracle import (radial_potential, radial_slope, radial_solution, radial_tilt,
                     radial_tilt_mass, sphere_area_constant)
from .solver import (Problem, SolveResult, SolverConfig, solve_admm, solve_conic,
                     solve_continuation, solve_picard, weak_residual)

__version__ = "0.1.0"
