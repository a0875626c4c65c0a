"""Per-element residuals: totals, Galerkin parts, artificial viscosity,
space-time residuals, distribution coefficients and limited residuals.

All heavy routines are vectorized over cells; the per-cell functions required
by the module contract slice the vectorized results.  Assembly order is fixed
(np.add.at over the cell list), so runs are bitwise reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

from . import state as hstate

DEGENERATE_REL_TOL = 1e-14
NORM_FLOOR = 1e-14

VISCOSITY_MODES = ("none", "rusanov", "mars")
SHOCK_DIR_MODES = ("velocity_fluctuation", "radial_velocity")


@dataclass
class SpatialResiduals:
    """Stage-local spatial residual data for every cell (leading axis = cell)."""
    mom_galerkin: np.ndarray      # (nc, 9, 2)
    ene_galerkin: np.ndarray      # (nc, 4), source included
    mom_total: np.ndarray         # (nc, 2)   boundary pressure-flux integral
    ene_total: np.ndarray         # (nc,)     int p div(u) - source
    boundary_flux_energy: np.ndarray  # (nc,)  closed contour p_hat (u.n)
    source_total: np.ndarray      # (nc,)     int of the energy source
    alpha: np.ndarray             # (nc,)     Rusanov coefficient |dK| max(rho c)
    visc_mom: np.ndarray          # (nc, 9, 2)
    visc_ene: np.ndarray          # (nc, 4)
    dissipation: np.ndarray       # (nc,) quadratic form of the active viscosity
    dissipation_rusanov: np.ndarray  # (nc,) reference alpha_K sum |u-ubar|^2
    fluctuation_sigma: np.ndarray    # (nc,) relative kinematic fluctuation sensor
    c_max: np.ndarray             # (nc,)
    u_dof_max: np.ndarray         # (nc,)
    face_velocity: np.ndarray = field(default=None, repr=False)       # (nc,4,3,2)
    face_pressure_flux: np.ndarray = field(default=None, repr=False)  # (nc,4,3)
    geometry: object = field(default=None, repr=False)

    @property
    def mom_spatial(self):
        return self.mom_galerkin + self.visc_mom

    @property
    def ene_spatial(self):
        return self.ene_galerkin + self.visc_ene


@dataclass
class ElementResidualSet:
    """Space-time residual data for every cell of one stage evaluation."""
    mom_spacetime: np.ndarray        # (nc, 9, 2)
    ene_spacetime: np.ndarray        # (nc, 4)
    mom_total: np.ndarray            # (nc, 2)
    ene_total: np.ndarray            # (nc,)
    mom_weights: np.ndarray = None   # (nc, 9, 2) distribution coefficients
    ene_weights: np.ndarray = None   # (nc, 4)
    mom_limited: np.ndarray = None   # (nc, 9, 2)
    ene_limited: np.ndarray = None   # (nc, 4)
    correction: np.ndarray = None    # (nc,) uniform per-element energy correction
    fallback_cells: np.ndarray = field(default=None, repr=False)


def pressure_flux(p_minus, p_plus=None):
    """Centered, consistent scalar pressure flux; the flux vector is p_hat * n.

    On boundary faces the exterior trace mirrors the interior one
    (p_plus = p_minus), which this function expresses by omitting p_plus.
    """
    if p_plus is None:
        return p_minus
    return 0.5 * (np.asarray(p_minus) + np.asarray(p_plus))


def _pressure_flux_faces(mesh, p_face):
    """p_hat at every face quadrature point of every cell, (nc, 4, 3)."""
    nc = mesh.n_cells
    cells = np.arange(nc)[:, None]
    other_c = np.where(mesh.neighbor_cell >= 0, mesh.neighbor_cell, cells)
    other_f = np.where(mesh.neighbor_face >= 0, mesh.neighbor_face, np.arange(4)[None, :])
    p_plus = p_face[other_c, other_f]
    return 0.5 * (p_face + p_plus)


def compute_spatial_residuals(mesh, masses, model, stage, velocity, eps,
                              visc_mode="none", shock_dir="velocity_fluctuation",
                              source=None):
    """One full spatial residual pass over all cells on one stage geometry."""
    if visc_mode not in VISCOSITY_MODES:
        raise ValueError(f"unknown viscosity mode {visc_mode!r}")
    if shock_dir not in SHOCK_DIR_MODES:
        raise ValueError(f"unknown shock direction mode {shock_dir!r}")
    ref = mesh.ref
    vol = hstate.evaluate_volume(mesh, masses, model, stage, velocity, eps)
    fac = hstate.evaluate_faces(mesh, masses, model, stage, velocity, eps)
    w_det = ref.quad_weights[None, :] * stage.det_jac

    p_hat = _pressure_flux_faces(mesh, fac["p"])
    flux_w = stage.face_weight * p_hat                     # (nc,4,3)
    mom_total = np.einsum("cfj,cfjd->cd", flux_w, stage.face_normal)
    surf = np.einsum("cfj,fjl,cfjd->cld", flux_w, ref.kin_at_face, stage.face_normal)
    volp = np.einsum("cq,cqlb->clb", w_det * vol["p"], stage.grad_kin)
    mom_galerkin = surf - volp

    if source is not None:
        src_q = source(stage.quad_xy.reshape(-1, 2)).reshape(stage.det_jac.shape)
    else:
        src_q = np.zeros_like(stage.det_jac)
    work_q = vol["p"] * vol["div_u"] - src_q
    ene_galerkin = np.einsum("cq,qe->ce", w_det * work_q, ref.thermo_at_quad)
    ene_total = np.einsum("cq,cq->c", w_det, work_q)
    source_total = np.einsum("cq,cq->c", w_det, src_q)

    u_dot_n = np.einsum("cfjd,cfjd->cfj", fac["u"], stage.face_normal)
    boundary_flux_energy = np.einsum("cfj,cfj->c", flux_w, u_dot_n)

    perimeter = stage.face_weight.sum(axis=(1, 2))
    rho_c = vol["rho"] * vol["c"]
    alpha = perimeter * rho_c.max(axis=1)

    visc_mom, visc_ene, diss, diss_rus = _viscosity(
        mesh, stage, vol, eps, model, visc_mode, shock_dir, alpha, w_det)

    u_cells = vol["u_cells"]
    u_bar = u_cells.mean(axis=1)
    fluct = np.linalg.norm(u_cells - u_bar[:, None, :], axis=-1).max(axis=1)
    u_dof_max = np.linalg.norm(u_cells, axis=-1).max(axis=1)
    c_max = vol["c"].max(axis=1)
    sigma = fluct / (u_dof_max + c_max + 1e-300)

    return SpatialResiduals(
        mom_galerkin=mom_galerkin, ene_galerkin=ene_galerkin,
        mom_total=mom_total, ene_total=ene_total,
        boundary_flux_energy=boundary_flux_energy, source_total=source_total,
        alpha=alpha, visc_mom=visc_mom, visc_ene=visc_ene,
        dissipation=diss, dissipation_rusanov=diss_rus,
        fluctuation_sigma=sigma, c_max=c_max, u_dof_max=u_dof_max,
        face_velocity=fac["u"], face_pressure_flux=p_hat, geometry=stage,
    )


def _viscosity(mesh, stage, vol, eps, model, mode, shock_dir, alpha, w_det):
    """Zero-sum artificial viscosity terms plus their dissipation quadratic forms."""
    u_cells = vol["u_cells"]
    nc = mesh.n_cells
    u_bar = u_cells.mean(axis=1)
    du = u_cells - u_bar[:, None, :]
    eps_bar = eps.mean(axis=1)
    deps = eps - eps_bar[:, None]
    diss_rus = alpha * np.einsum("cld,cld->c", du, du)

    if mode == "none":
        z9 = np.zeros_like(u_cells)
        return z9, np.zeros_like(eps), np.zeros(nc), diss_rus

    if mode == "rusanov":
        visc_mom = alpha[:, None, None] * du
        visc_ene = alpha[:, None] * deps
        return visc_mom, visc_ene, diss_rus.copy(), diss_rus

    # MARS: per-DOF coefficients alpha_i = rhoU * |e_i . n_i| with a weighted
    # mean fluctuation; maximal viscosity along the shock direction only.
    ref = mesh.ref
    gamma = model.gamma_cells(nc)
    s_coef = 0.5 * (gamma + 1.0)
    rho_max = vol["rho"].max(axis=1)
    c_max = vol["c"].max(axis=1)

    n_kin = np.einsum("cq,cqlb->clb", w_det, stage.grad_kin)
    du_norm = np.linalg.norm(du, axis=-1)
    dir_vec = du if shock_dir == "velocity_fluctuation" else u_cells
    dir_norm = np.linalg.norm(dir_vec, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_unit = np.where(dir_norm[..., None] > NORM_FLOOR, dir_vec / dir_norm[..., None], 0.0)
    imped = rho_max[:, None] * (c_max[:, None] + s_coef[:, None] * du_norm)
    a_i = imped * np.abs(np.einsum("cld,cld->cl", e_unit, n_kin))
    a_i = np.where(dir_norm > NORM_FLOOR, a_i, 0.0)
    a_sum = a_i.sum(axis=1)
    ok = a_sum > NORM_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        u_tilde = np.einsum("cl,cld->cd", a_i, u_cells) / a_sum[:, None]
    visc_mom = np.where(ok[:, None, None],
                        a_i[..., None] * (u_cells - u_tilde[:, None, :]), 0.0)
    diss = np.where(ok, np.einsum("cl,cld,cld->c",
                                  a_i,
                                  u_cells - u_tilde[:, None, :],
                                  u_cells - u_tilde[:, None, :]), 0.0)

    # Energy analogue: the velocity fluctuation interpolated at the thermo
    # DOF's reference location drives the impedance and the direction sensor.
    n_th = np.einsum("cq,cqeb->ceb", w_det, stage.grad_thermo)
    u_at_t = np.einsum("el,cld->ced", ref.kin_at_thermo_nodes, u_cells)
    du_t = u_at_t - u_bar[:, None, :]
    du_t_norm = np.linalg.norm(du_t, axis=-1)
    dir_t = du_t if shock_dir == "velocity_fluctuation" else u_at_t
    dir_t_norm = np.linalg.norm(dir_t, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e_t = np.where(dir_t_norm[..., None] > NORM_FLOOR, dir_t / dir_t_norm[..., None], 0.0)
    imped_t = rho_max[:, None] * (c_max[:, None] + s_coef[:, None] * du_t_norm)
    a_e = imped_t * np.abs(np.einsum("ced,ced->ce", e_t, n_th))
    a_e = np.where(dir_t_norm > NORM_FLOOR, a_e, 0.0)
    ae_sum = a_e.sum(axis=1)
    ok_e = ae_sum > NORM_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        eps_tilde = np.einsum("ce,ce->c", a_e, eps) / ae_sum
    visc_ene = np.where(ok_e[:, None], a_e * (eps - eps_tilde[:, None]), 0.0)
    return visc_mom, visc_ene, diss, diss_rus


def spacetime_residuals(mesh, masses, spatial0, spatialk, k, dt,
                        du_cells=None, deps=None, first_order=False):
    """Modified space-time residuals for stage k in {0, 1}.

    The time-increment integrals use the conserved mass measure (stage-0
    geometry), keeping the frozen lumped-mass identity exact; each stage's
    spatial terms were already evaluated on that stage's own geometry.
    """
    if k not in (0, 1):
        raise ValueError("stage index k must be 0 or 1")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mom = 0.5 * (spatial0.mom_spatial + spatialk.mom_spatial)
    ene = 0.5 * (spatial0.ene_spatial + spatialk.ene_spatial)
    if k == 1 and not first_order:
        mom = mom + np.einsum("cil,cld->cid", masses.consistent_kin, du_cells) / dt
        ene = ene + np.einsum("cie,ce->ci", masses.consistent_thermo, deps) / dt
    return ElementResidualSet(
        mom_spacetime=mom, ene_spacetime=ene,
        mom_total=mom.sum(axis=1), ene_total=ene.sum(axis=1),
    )


def _limit_component(values, totals):
    """Positive-part distribution of one scalar component.

    values: (nc, N) per-DOF residuals, totals: (nc,).  Returns (weights,
    limited).  Degenerate totals distribute uniformly.
    """
    n_loc = values.shape[1]
    scale = np.abs(values).sum(axis=1)
    degenerate = np.abs(totals) < DEGENERATE_REL_TOL * (scale + 1e-300)
    safe_tot = np.where(degenerate, 1.0, totals)
    ratios = values / safe_tot[:, None]
    pos = np.maximum(ratios, 0.0)
    denom = pos.sum(axis=1)
    bad = degenerate | (denom <= 0.0)
    weights = np.where(bad[:, None], 1.0 / n_loc, pos / np.where(bad, 1.0, denom)[:, None])
    limited = weights * totals[:, None]
    return weights, limited, bad


def distribution_and_limit(res):
    """Fill distribution coefficients and limited residuals of a residual set.

    Each velocity component and the energy are limited independently; the
    limited residuals redistribute the totals, so conservation is exact by
    construction.
    """
    wx, lx, _ = _limit_component(res.mom_spacetime[:, :, 0], res.mom_total[:, 0])
    wy, ly, _ = _limit_component(res.mom_spacetime[:, :, 1], res.mom_total[:, 1])
    we, le, _ = _limit_component(res.ene_spacetime, res.ene_total)
    res.mom_weights = np.stack([wx, wy], axis=-1)
    res.ene_weights = we
    res.mom_limited = np.stack([lx, ly], axis=-1)
    res.ene_limited = le
    return res


def apply_degenerate_fallback(res, sigma, threshold):
    """First-order fallback where the totals are degenerate but the cell
    carries an O(1) kinematic fluctuation (a discontinuity with nothing to
    distribute).  The fallback residuals sum to the same (near-zero) totals,
    so the distribution conservation identity is untouched.
    """
    if threshold is None or threshold <= 0.0:
        res.fallback_cells = np.zeros(len(sigma), dtype=bool)
        return res
    scale_x = np.abs(res.mom_spacetime[:, :, 0]).sum(axis=1)
    scale_y = np.abs(res.mom_spacetime[:, :, 1]).sum(axis=1)
    deg = ((np.abs(res.mom_total[:, 0]) < DEGENERATE_REL_TOL * (scale_x + 1e-300))
           & (np.abs(res.mom_total[:, 1]) < DEGENERATE_REL_TOL * (scale_y + 1e-300)))
    mask = deg & (sigma > threshold)
    if mask.any():
        res.mom_limited[mask] = res.mom_spacetime[mask]
        scale_e = np.abs(res.ene_spacetime).sum(axis=1)
        deg_e = np.abs(res.ene_total) < DEGENERATE_REL_TOL * (scale_e + 1e-300)
        me = mask & deg_e
        res.ene_limited[me] = res.ene_spacetime[me]
    res.fallback_cells = mask
    return res


# Per-cell wrappers exposing the module contract on a single element.

def galerkin_and_total_residuals(mesh, masses, model, cell, stage_state, source=None):
    """Galerkin and total residuals of one cell (dict of arrays)."""
    sp = compute_spatial_residuals(
        mesh, masses, model, stage_state.geometry, stage_state.velocity,
        stage_state.specific_internal_energy, visc_mode="none", source=source)
    return {
        "mom_galerkin": sp.mom_galerkin[cell],
        "ene_galerkin": sp.ene_galerkin[cell],
        "mom_total": sp.mom_total[cell],
        "ene_total": sp.ene_total[cell],
        "boundary_flux_energy": sp.boundary_flux_energy[cell],
    }


def rusanov_alpha(mesh, masses, model, cell, stage_state):
    """alpha_K = |dK| * max over the cell quadrature points of rho*c."""
    vol = hstate.evaluate_volume(mesh, masses, model, stage_state.geometry,
                                 stage_state.velocity,
                                 stage_state.specific_internal_energy)
    perim = stage_state.geometry.face_weight[cell].sum()
    return float(perim * (vol["rho"][cell] * vol["c"][cell]).max())


def viscosity_terms(mesh, masses, model, cell, stage_state, mode,
                    shock_dir="velocity_fluctuation"):
    """(visc_mom (9,2), visc_ene (4,)) for one cell."""
    sp = compute_spatial_residuals(
        mesh, masses, model, stage_state.geometry, stage_state.velocity,
        stage_state.specific_internal_energy, visc_mode=mode, shock_dir=shock_dir)
    return sp.visc_mom[cell], sp.visc_ene[cell]
