"""Two-stage deferred-correction RK2 driver: CFL control, boundary
conditions, the stage pipeline and the run loop.

Each stage is a strict pipeline: residual assembly, diagonal velocity solve,
boundary projection, position update, conservation correction, energy solve.
Assembly uses a fixed cell order, so runs are bitwise reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

from . import conservation as cons
from . import residuals as rd
from . import state as hstate
from .mesh import StageGeometry, build_cartesian_mesh

EXIT_OK = 0
EXIT_TANGLED = 2
EXIT_NAN = 3
EXIT_CONFIG = 4


class TanglingError(RuntimeError):
    pass


class NanError(RuntimeError):
    pass


@dataclass
class RunConfig:
    problem: str = "taylor-green"
    nx: int = None
    ny: int = None
    cfl: float = 0.25
    t_end: float = None
    dt_max: float = np.inf
    viscosity: str = None          # none | rusanov | mars (None = problem default)
    shock_dir: str = None          # velocity_fluctuation | radial_velocity
    output_every: int = 0
    output_dir: str = None
    order: int = 2                 # 1 selects the first-order diagnostic scheme
    fallback_sigma: float = 0.5    # relative-fluctuation threshold of the degenerate-total fallback
    max_steps: int = 2_000_000

    def validate(self):
        if not (0.0 < self.cfl <= 1.0):
            raise ValueError("cfl must lie in (0, 1]")
        if self.t_end is not None and self.t_end < 0.0:
            raise ValueError("t_end must be nonnegative")
        if self.viscosity is not None and self.viscosity not in rd.VISCOSITY_MODES:
            raise ValueError(f"unknown viscosity mode {self.viscosity!r}")
        if self.shock_dir is not None and self.shock_dir not in rd.SHOCK_DIR_MODES:
            raise ValueError(f"unknown shock direction mode {self.shock_dir!r}")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")


@dataclass
class BoundaryCondition:
    """Realized boundary conditions: DOF index sets per projection type."""
    side_types: dict
    wall_x_dofs: np.ndarray     # normal along x: zero the x velocity component
    wall_y_dofs: np.ndarray
    fixed_dofs: np.ndarray
    fixed_values: np.ndarray


def build_boundary_condition(mesh, side_types, initial_velocity):
    for side in ("xmin", "xmax", "ymin", "ymax"):
        if side not in side_types:
            raise ValueError(f"boundary side {side} is untagged")
    wall_x, wall_y, fixed = [], [], []
    for side, kind in side_types.items():
        dofs = mesh.side_dofs[side]
        if kind == "wall":
            (wall_x if side in ("xmin", "xmax") else wall_y).append(dofs)
        elif kind == "fixed":
            fixed.append(dofs)
        elif kind != "free":
            raise ValueError(f"unknown boundary type {kind!r}")
    wall_x = np.unique(np.concatenate(wall_x)) if wall_x else np.empty(0, dtype=int)
    wall_y = np.unique(np.concatenate(wall_y)) if wall_y else np.empty(0, dtype=int)
    fixed = np.unique(np.concatenate(fixed)) if fixed else np.empty(0, dtype=int)
    return BoundaryCondition(dict(side_types), wall_x, wall_y, fixed,
                             initial_velocity[fixed].copy())


def apply_velocity_bc(velocity, bc):
    """Strong projection: zero wall-normal components, overwrite fixed DOFs.

    Corner DOFs belonging to two walls lose both components.  Applied in
    place; fixed values win over wall projection where both apply.
    """
    velocity[bc.wall_x_dofs, 0] = 0.0
    velocity[bc.wall_y_dofs, 1] = 0.0
    if len(bc.fixed_dofs):
        velocity[bc.fixed_dofs] = bc.fixed_values
    return velocity


@dataclass
class StepDiagnostics:
    boundary_flux: float = 0.0
    source_input: float = 0.0
    dissipation: float = 0.0
    max_entropy_sum: float = 0.0
    fallback_cells: int = 0


@dataclass
class RunResult:
    status: int
    message: str
    state: object
    mesh: object
    masses: object
    model: object
    problem: object
    config: object
    ledger: object
    steps: int
    min_det_jac: float
    beta_range: tuple
    beta_sum_err: float
    limited_sum_err: float
    dissipation_total: float
    snapshots: list = field(default_factory=list)


class Solver:
    """Owns the evolving fields and advances them step by step."""

    def __init__(self, problem, config):
        from .problems import initialize_state

        config.validate()
        self.problem = problem
        self.config = config
        nx = config.nx or problem.nx
        ny = config.ny or problem.ny
        self.mesh = build_cartesian_mesh(nx, ny, problem.bbox)
        self.model = hstate.MaterialModel(problem.gamma)
        self.velocity, eps0, rho0 = initialize_state(self.mesh, problem)
        self.eps = eps0
        self.masses = hstate.init_lumped_masses(self.mesh, rho0)
        self.bc = build_boundary_condition(self.mesh, problem.bc, self.velocity)
        apply_velocity_bc(self.velocity, self.bc)
        self.positions = self.mesh.initial_positions.copy()
        self.geom = self.mesh.initial_geometry
        self.time = 0.0
        self.step_count = 0
        self.viscosity = config.viscosity or problem.viscosity
        self.shock_dir = config.shock_dir or problem.shock_dir
        self.source = problem.energy_source

        self.flux_accum = 0.0
        self.source_accum = 0.0
        self.diss_accum = 0.0
        self.min_det_jac_run = self.geom.min_det_jac
        self.beta_min, self.beta_max = 1.0, 0.0
        self.beta_sum_err = 0.0
        self.limited_sum_err = 0.0
        self.fallback_total = 0
        self.collect_stage_data = False
        self.stage_records = []
        self.ledger = cons.ConservationLedger()
        self._record_ledger()

    # -- helpers -------------------------------------------------------

    def state(self):
        return hstate.StageState(self.velocity, self.eps, self.geom, self.time)

    def _spatial(self, geom, velocity, eps):
        return rd.compute_spatial_residuals(
            self.mesh, self.masses, self.model, geom, velocity, eps,
            visc_mode=self.viscosity, shock_dir=self.shock_dir, source=self.source)

    def _assemble_kin(self, cellwise):
        out = np.zeros((self.mesh.n_kin_dofs, 2))
        np.add.at(out, self.mesh.cell_kin_dofs.ravel(), cellwise.reshape(-1, 2))
        return out

    def _boundary_flux(self, spatial):
        """Pressure-work flux through the domain boundary only (the value the
        per-element closed-contour fluxes telescope to)."""
        mesh, geom = self.mesh, spatial.geometry
        c, f = mesh.boundary_cells, mesh.boundary_faces
        u_f = spatial.face_velocity[c, f]
        p_hat = spatial.face_pressure_flux[c, f]
        udn = np.einsum("kjd,kjd->kj", u_f, geom.face_normal[c, f])
        return float((geom.face_weight[c, f] * p_hat * udn).sum())

    def _track_beta(self, res):
        self.beta_min = min(self.beta_min, float(res.mom_weights.min()),
                            float(res.ene_weights.min()))
        self.beta_max = max(self.beta_max, float(res.mom_weights.max()),
                            float(res.ene_weights.max()))
        bs = np.abs(res.mom_weights.sum(axis=1) - 1.0).max()
        be = np.abs(res.ene_weights.sum(axis=1) - 1.0).max()
        self.beta_sum_err = max(self.beta_sum_err, float(bs), float(be))
        for limited, total in ((res.mom_limited[:, :, 0], res.mom_total[:, 0]),
                               (res.mom_limited[:, :, 1], res.mom_total[:, 1]),
                               (res.ene_limited, res.ene_total)):
            scale = np.abs(limited).sum(axis=1) + np.abs(total) + 1e-300
            err = np.abs(limited.sum(axis=1) - total) / scale
            self.limited_sum_err = max(self.limited_sum_err, float(err.max()))

    def _check_fields(self, *arrays):
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NanError(f"non-finite field at step {self.step_count}, t={self.time:.6g}")

    def _new_geometry(self, positions):
        geom = StageGeometry(self.mesh, positions)
        if not np.isfinite(geom.min_det_jac):
            raise NanError(f"non-finite geometry at step {self.step_count}")
        self.min_det_jac_run = min(self.min_det_jac_run, geom.min_det_jac)
        if geom.min_det_jac <= 0.0:
            bad = np.argwhere(geom.det_jac <= 0.0)
            cells = np.unique(bad[:, 0])[:8]
            raise TanglingError(
                f"mesh tangled at step {self.step_count}, t={self.time:.6g}, cells {cells.tolist()}")
        return geom

    # -- time step selection --------------------------------------------

    def compute_dt(self):
        """dt = min(dt_max, cfl * min_K l_K / (c_K + |u|_K)) with a static guard."""
        vol = hstate.evaluate_volume(self.mesh, self.masses, self.model,
                                     self.geom, self.velocity, self.eps)
        c_k = vol["c"].max(axis=1)
        u_k = np.linalg.norm(vol["u_cells"], axis=-1).max(axis=1)
        l_k = self.geom.edge_lengths().min(axis=1)
        denom = c_k + u_k
        active = denom > 1e-14
        if not active.any():
            dt = self.config.dt_max
        else:
            dt = min(self.config.dt_max,
                     self.config.cfl * float((l_k[active] / denom[active]).min()))
        if not (dt > 0.0):
            raise ValueError("nonpositive time step")
        return dt

    # -- the step --------------------------------------------------------

    def _stage(self, k, dt, spatial0, spatialk, u_stage, eps_stage, x0, u0):
        """One stage of the RK2 scheme; returns the updated fields and geometry."""
        mesh, cfg = self.mesh, self.config
        first = cfg.order == 1
        if k == 0:
            res = rd.spacetime_residuals(mesh, self.masses, spatial0, spatial0, 0, dt,
                                         first_order=first)
        else:
            du = mesh.gather_cellwise(u_stage - u0)
            res = rd.spacetime_residuals(mesh, self.masses, spatial0, spatialk, 1, dt,
                                         du_cells=du, deps=eps_stage - self._eps0,
                                         first_order=first)
        if first:
            res.mom_limited = res.mom_spacetime
            res.ene_limited = res.ene_spacetime
            res.mom_weights = np.full_like(res.mom_spacetime, 1.0 / res.mom_spacetime.shape[1])
            res.ene_weights = np.full_like(res.ene_spacetime, 1.0 / res.ene_spacetime.shape[1])
            res.fallback_cells = np.zeros(mesh.n_cells, dtype=bool)
        else:
            rd.distribution_and_limit(res)
            sigma = np.maximum(spatial0.fluctuation_sigma, spatialk.fluctuation_sigma)
            threshold = None if self.viscosity == "none" else cfg.fallback_sigma
            rd.apply_degenerate_fallback(res, sigma, threshold)
            self._track_beta(res)
        self.fallback_total += int(res.fallback_cells.sum())

        assembled = self._assemble_kin(res.mom_limited)
        u_from = u0 if first else u_stage
        u_next = u_from - dt * assembled / self.masses.kin_global[:, None]
        apply_velocity_bc(u_next, self.bc)

        x_next = x0 + 0.5 * dt * (u0 + u_stage)
        geom_next = self._new_geometry(x_next)

        flux_half = 0.5 * (spatial0.boundary_flux_energy + spatialk.boundary_flux_energy)
        src_half = 0.5 * (spatial0.source_total + spatialk.source_total)
        if first:
            r = cons.correction_term_stagewise([spatial0, spatialk])
            res.correction = r
            corrected = res.ene_limited + r[:, None]
        else:
            r, corrected = cons.correction_term(mesh, res, u_stage, u_next,
                                                flux_half, src_half)
        eps_from = self._eps0 if first else eps_stage
        eps_next = eps_from - dt * corrected / self.masses.thermo_global
        self._check_fields(u_next, eps_next)

        diag = StepDiagnostics(
            boundary_flux=0.5 * (self._bflux0 + self._boundary_flux(spatialk)),
            source_input=float(src_half.sum()),
            dissipation=0.5 * float(spatial0.dissipation.sum() + spatialk.dissipation.sum()),
            max_entropy_sum=max(0.0, float((4.0 * r).max())),
            fallback_cells=int(res.fallback_cells.sum()),
        )
        if self.collect_stage_data:
            self.stage_records.append({
                "step": self.step_count, "stage": k, "dt": dt,
                "sum_r": 4.0 * r,
                "states": [(self._u0.copy(), self._eps0.copy(), self._geom0),
                           (u_stage.copy(), eps_stage.copy(), spatialk.geometry)],
                "alpha": (spatial0.alpha.copy(), spatialk.alpha.copy()),
                "u_scale": float(max(spatial0.u_dof_max.max(), spatialk.u_dof_max.max())),
            })
        return u_next, eps_next, geom_next, diag

    def advance_step(self, dt):
        """Advance from t^n to t^n + dt through both RK2 stages."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        mesh = self.mesh
        x0, u0, eps0 = self.positions, self.velocity, self.eps
        self._u0, self._eps0, self._geom0 = u0, eps0, self.geom

        s0 = self._spatial(self.geom, u0, eps0)
        self._bflux0 = self._boundary_flux(s0)

        u1, eps1, geom1, d0 = self._stage(0, dt, s0, s0, u0, eps0, x0, u0)

        s1 = self._spatial(geom1, u1, eps1)
        u2, eps2, geom2, d1 = self._stage(1, dt, s0, s1, u1, eps1, x0, u0)

        self.velocity, self.eps = u2, eps2
        self.positions, self.geom = geom2.positions, geom2
        self.time += dt
        self.step_count += 1
        self.flux_accum += dt * (d0.boundary_flux + d1.boundary_flux)
        self.source_accum += dt * (d0.source_input + d1.source_input)
        self.diss_accum += dt * (d0.dissipation + d1.dissipation)
        self._last_entropy = max(d0.max_entropy_sum, d1.max_entropy_sum)
        return d0, d1

    def _record_ledger(self):
        mass = float((hstate.density_at_quad(self.masses, self.geom)
                      * self.geom.det_jac
                      * self.mesh.ref.quad_weights[None, :]).sum())
        kin, internal = cons.lumped_energy(self.masses, self.velocity, self.eps)
        mom = cons.lumped_momentum(self.masses, self.velocity)
        self.ledger.record(self.time, mass, mom, kin, internal,
                           self.flux_accum, self.source_accum,
                           getattr(self, "_last_entropy", 0.0), self.diss_accum)

    # -- the loop --------------------------------------------------------

    def run(self):
        """Advance to t_end; snapshots and ledger at the configured cadence."""
        from . import io_cli

        cfg = self.config
        t_end = cfg.t_end if cfg.t_end is not None else self.problem.t_end
        status, message = EXIT_OK, "completed"
        snapshots = []

        def snap(tag):
            if cfg.output_dir:
                path = io_cli.snapshot_path(cfg.output_dir, self.problem.name, tag)
                io_cli.write_snapshot(self.mesh, self.masses, self.model,
                                      self.state(), path, origin=self.problem.origin)
                snapshots.append(path)

        snap(0)
        tiny = 1e-14 * max(1.0, abs(t_end))
        while self.time < t_end - tiny:
            if self.step_count >= cfg.max_steps:
                status, message = EXIT_TANGLED, "step budget exhausted before t_end"
                break
            try:
                dt = min(self.compute_dt(), t_end - self.time)
                if dt < 1e-13 * max(1.0, t_end):
                    raise TanglingError(
                        f"time step collapsed at t={self.time:.6g} (cell degenerating)")
                self.advance_step(dt)
            except TanglingError as exc:
                status, message = EXIT_TANGLED, str(exc)
                break
            except NanError as exc:
                status, message = EXIT_NAN, str(exc)
                break
            if abs(t_end - self.time) <= tiny:
                self.time = t_end
            self._record_ledger()
            if cfg.output_every and self.step_count % cfg.output_every == 0:
                snap(self.step_count)
        if status == EXIT_OK and not (cfg.output_every and self.step_count % cfg.output_every == 0):
            snap(self.step_count)

        return RunResult(
            status=status, message=message, state=self.state(), mesh=self.mesh,
            masses=self.masses, model=self.model, problem=self.problem,
            config=cfg, ledger=self.ledger, steps=self.step_count,
            min_det_jac=self.min_det_jac_run,
            beta_range=(self.beta_min, self.beta_max),
            beta_sum_err=self.beta_sum_err, limited_sum_err=self.limited_sum_err,
            dissipation_total=self.diss_accum, snapshots=snapshots,
        )


def run(config, problem=None):
    """Build a solver for the configured problem and run it to t_end."""
    from .problems import get_problem

    if problem is None:
        problem = get_problem(config.problem, config.nx, config.ny)
    solver = Solver(problem, config)
    return solver.run()
