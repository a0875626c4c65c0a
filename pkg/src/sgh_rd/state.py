"""Field storage and constitutive evaluation.

Density is never a DOF array: it is reconstructed pointwise from the strong
mass statement rho = rho0 * detJ0 / detJ, which makes mass conservation exact
by construction.  The initial density is stored as its thermo-space
interpolant (per-cell nodal sampling), and the lumped masses are integrated
once on the initial geometry and frozen.
"""

from dataclasses import dataclass, field

import numpy as np


class StateError(ValueError):
    pass


class InvertedElementError(RuntimeError):
    pass


@dataclass
class MaterialModel:
    """Ideal-gas closure; gamma may be a scalar or a per-cell array."""
    gamma: object = 1.4

    def gamma_cells(self, n_cells):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 0:
            return np.full(n_cells, float(g))
        if g.shape != (n_cells,):
            raise StateError("per-cell gamma map has the wrong length")
        return g


def eos_eval(rho, eps, model):
    """Ideal-gas pressure and sound speed: p=(gamma-1)*rho*eps, c=sqrt(gamma*max(p,0)/rho).

    Negative pressure is permitted (a cold state may undershoot); it is
    clamped to zero only inside the sound speed.
    """
    gamma = model.gamma if isinstance(model, MaterialModel) else model
    rho_a = np.asarray(rho, dtype=float)
    if np.any(rho_a <= 0.0):
        raise StateError("nonpositive density in EOS evaluation")
    p = (np.asarray(gamma) - 1.0) * rho_a * np.asarray(eps, dtype=float)
    c = np.sqrt(np.asarray(gamma) * np.maximum(p, 0.0) / rho_a)
    if np.ndim(rho) == 0 and np.ndim(p) == 0:
        return float(p), float(c)
    return p, c


@dataclass
class StageState:
    """Velocity and specific-internal-energy DOFs plus the stage geometry."""
    velocity: np.ndarray            # (n_kin_dofs, 2)
    specific_internal_energy: np.ndarray  # (n_cells, 4)
    geometry: object                # StageGeometry
    time: float = 0.0

    def copy_fields(self):
        return self.velocity.copy(), self.specific_internal_energy.copy()


@dataclass
class LumpedMasses:
    """Diagonal (lumped) mass data, frozen at t=0.

    Also carries the conserved mass measure rho0*detJ0*w at the volume points
    and the per-element rho-weighted consistent matrices used by the
    time-increment integrals; both are time independent.
    """
    kin_global: np.ndarray          # (n_kin_dofs,)
    thermo_global: np.ndarray       # (n_cells, 4)
    kin_per_element: np.ndarray     # (n_cells, 9)
    thermo_per_element: np.ndarray  # (n_cells, 4)
    initial_density_dofs: np.ndarray  # (n_cells, 4)
    mass_measure: np.ndarray = field(default=None, repr=False)       # (n_cells, nq)
    rho0_at_quad: np.ndarray = field(default=None, repr=False)       # (n_cells, nq)
    rho0_at_face: np.ndarray = field(default=None, repr=False)       # (n_cells, 4, 3)
    det_jac0_quad: np.ndarray = field(default=None, repr=False)
    det_jac0_face: np.ndarray = field(default=None, repr=False)
    consistent_kin: np.ndarray = field(default=None, repr=False)     # (n_cells, 9, 9)
    consistent_thermo: np.ndarray = field(default=None, repr=False)  # (n_cells, 4, 4)

    def total_mass(self):
        return float(self.mass_measure.sum())


def init_lumped_masses(mesh, rho0_dofs):
    """Integrate the lumped masses on the initial geometry.

    rho0_dofs are the thermo-space coefficients of the initial density,
    (n_cells, 4); every entry of the resulting tables must be positive.
    """
    ref = mesh.ref
    geo0 = mesh.initial_geometry
    rho0_dofs = np.asarray(rho0_dofs, dtype=float)
    if np.any(rho0_dofs <= 0.0):
        raise StateError("initial density must be positive")

    rho0_q = np.einsum("qe,ce->cq", ref.thermo_at_quad, rho0_dofs)
    rho0_f = np.einsum("fje,ce->cfj", ref.thermo_at_face, rho0_dofs)
    measure = ref.quad_weights[None, :] * rho0_q * geo0.det_jac

    kin_per = np.einsum("cq,ql->cl", measure, ref.kin_at_quad)
    th_per = np.einsum("cq,qe->ce", measure, ref.thermo_at_quad)
    kin_global = np.zeros(mesh.n_kin_dofs)
    np.add.at(kin_global, mesh.cell_kin_dofs.ravel(), kin_per.ravel())
    if np.any(kin_per <= 0.0) or np.any(th_per <= 0.0) or np.any(kin_global <= 0.0):
        raise StateError("nonpositive lumped mass entry")

    return LumpedMasses(
        kin_global=kin_global,
        thermo_global=th_per.copy(),
        kin_per_element=kin_per,
        thermo_per_element=th_per,
        initial_density_dofs=rho0_dofs,
        mass_measure=measure,
        rho0_at_quad=rho0_q,
        rho0_at_face=rho0_f,
        det_jac0_quad=geo0.det_jac.copy(),
        det_jac0_face=geo0.face_jac_det.copy(),
        consistent_kin=np.einsum("cq,qi,ql->cil", measure, ref.kin_at_quad, ref.kin_at_quad),
        consistent_thermo=np.einsum("cq,qi,qe->cie", measure, ref.thermo_at_quad, ref.thermo_at_quad),
    )


def density_at_quad(masses, stage):
    """Density at all volume quadrature points of all cells: rho0*detJ0/detJ."""
    return masses.rho0_at_quad * masses.det_jac0_quad / stage.det_jac


def density_at_faces(masses, stage):
    """Density traces at all face quadrature points (cell-sided)."""
    return masses.rho0_at_face * masses.det_jac0_face / stage.face_jac_det


def density_at(mesh, masses, cell, ref_point, stage):
    """Pointwise density rho0_h(X) * detJ0 / detJ at one reference point."""
    from .bernstein import eval_basis
    from .mesh import geometry_at

    tvals, _ = eval_basis("thermo", ref_point)
    rho0 = float(tvals @ masses.initial_density_dofs[cell])
    _, _, det0 = geometry_at(mesh, cell, ref_point, mesh.initial_geometry)
    _, _, det = geometry_at(mesh, cell, ref_point, stage)
    if det <= 0.0:
        raise InvertedElementError(f"detJ <= 0 in cell {cell}")
    return rho0 * det0 / det


def eval_state_at(mesh, masses, model, cell, ref_point, state):
    """(u, grad_u, eps, rho, p, c) at one reference point of one cell.

    grad_u is taken in physical coordinates on the current geometry.
    """
    from .bernstein import eval_basis

    kvals, kgrads = eval_basis("kinematic", ref_point)
    tvals, _ = eval_basis("thermo", ref_point)
    stage = state.geometry
    pos = stage.positions[mesh.cell_kin_dofs[cell]]
    udofs = state.velocity[mesh.cell_kin_dofs[cell]]
    jac = np.einsum("la,ld->da", kgrads, pos)
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det == 0.0 or not np.isfinite(det):
        raise InvertedElementError(f"singular Jacobian in cell {cell}")
    inv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det
    u = kvals @ udofs
    du_dref = np.einsum("la,ld->da", kgrads, udofs)  # du_d/dref_a
    grad_u = np.einsum("da,ab->db", du_dref, inv)
    eps = float(tvals @ state.specific_internal_energy[cell])
    rho = density_at(mesh, masses, cell, ref_point, stage)
    gamma = model.gamma_cells(mesh.n_cells)[cell]
    p, c = eos_eval(rho, eps, gamma)
    return u, grad_u, eps, rho, p, c


def evaluate_volume(mesh, masses, model, stage, velocity, eps):
    """Vectorized state evaluation at all volume quadrature points.

    Returns a dict with rho, eps, p, c, u, div_u at (n_cells, nq) resolution
    plus the cellwise velocity DOFs.
    """
    ref = mesh.ref
    u_cells = mesh.gather_cellwise(velocity)
    rho_q = density_at_quad(masses, stage)
    if np.any(stage.det_jac <= 0.0):
        raise InvertedElementError("inverted element during state evaluation")
    eps_q = np.einsum("qe,ce->cq", ref.thermo_at_quad, eps)
    gamma = model.gamma_cells(mesh.n_cells)[:, None]
    p_q = (gamma - 1.0) * rho_q * eps_q
    c_q = np.sqrt(gamma * np.maximum(p_q, 0.0) / rho_q)
    u_q = np.einsum("ql,cld->cqd", ref.kin_at_quad, u_cells)
    grad_u = np.einsum("qla,cld,cqab->cqdb", ref.kin_grad_at_quad, u_cells, stage.inv_jac)
    div_u = grad_u[..., 0, 0] + grad_u[..., 1, 1]
    return {
        "u_cells": u_cells, "rho": rho_q, "eps": eps_q, "p": p_q, "c": c_q,
        "u": u_q, "grad_u": grad_u, "div_u": div_u,
    }


def evaluate_faces(mesh, masses, model, stage, velocity, eps):
    """Cell-sided traces (u, rho, p) at all face quadrature points."""
    ref = mesh.ref
    u_cells = mesh.gather_cellwise(velocity)
    u_f = np.einsum("fjl,cld->cfjd", ref.kin_at_face, u_cells)
    rho_f = density_at_faces(masses, stage)
    eps_f = np.einsum("fje,ce->cfj", ref.thermo_at_face, eps)
    gamma = model.gamma_cells(mesh.n_cells)[:, None, None]
    p_f = (gamma - 1.0) * rho_f * eps_f
    return {"u": u_f, "rho": rho_f, "p": p_f}
