"""Staggered-grid Lagrangian hydrodynamics with residual distribution.

Second-order cell-staggered scheme on moving quadrilateral meshes: quadratic
Bernstein kinematics, discontinuous bilinear thermodynamics, matrix-free
deferred-correction RK2, exact discrete total-energy conservation and
Rusanov/MARS shock viscosity, plus the benchmark problems and verification
harness.
"""

from .bernstein import ReferenceElement, eval_basis, quadrature_rule
from .mesh import (MovingMesh, StageGeometry, build_cartesian_mesh,
                   face_quadrature, geometry_at, mesh_quality)
from .state import (LumpedMasses, MaterialModel, StageState, density_at,
                    eos_eval, eval_state_at, init_lumped_masses)
from .residuals import (ElementResidualSet, SpatialResiduals,
                        compute_spatial_residuals, distribution_and_limit,
                        pressure_flux, spacetime_residuals)
from .conservation import ConservationLedger, correction_term, entropy_diagnostic, lumped_energy
from .timestepper import (BoundaryCondition, RunConfig, RunResult, Solver,
                          apply_velocity_bc, run)
from .problems import (ProblemSpec, get_problem, initialize_state,
                       make_gresho, make_noh, make_sedov, make_taylor_green,
                       make_triple_point)
from .io_cli import (conservation_report, convergence_table, error_norms,
                     parse_config, write_snapshot)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "1.0.0"
