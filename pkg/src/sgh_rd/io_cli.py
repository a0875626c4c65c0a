"""Configuration parsing, snapshots, error norms, convergence tables,
conservation reports and the command-line entry point.

Quantitative outputs are CSV; field snapshots are legacy-VTK ASCII
unstructured grids (4-corner quads, curvature dropped for visualization
only).  Output is bitwise deterministic for identical configs.
"""

import argparse
import os
import sys

import numpy as np

from . import timestepper as ts
from . import state as hstate
from .problems import PROBLEM_NAMES, get_problem


class ConfigError(ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


_SHOCK_DIR_ALIASES = {
    "fluctuation": "velocity_fluctuation",
    "radial": "radial_velocity",
    "velocity_fluctuation": "velocity_fluctuation",
    "radial_velocity": "radial_velocity",
}


def _parse_int(key, value, minimum=None):
    try:
        out = int(value)
    except ValueError:
        raise ConfigError(key, f"cannot parse integer from {value!r}")
    if minimum is not None and out < minimum:
        raise ConfigError(key, f"must be >= {minimum}")
    return out


def _parse_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(key, f"cannot parse number from {value!r}")


def _apply_option(cfg, key, value):
    if key == "problem":
        if value not in PROBLEM_NAMES:
            raise ConfigError(key, f"unknown problem {value!r}")
        cfg.problem = value
    elif key == "nx":
        cfg.nx = _parse_int(key, value, 1)
    elif key == "ny":
        cfg.ny = _parse_int(key, value, 1)
    elif key == "cfl":
        cfg.cfl = _parse_float(key, value)
    elif key == "t_end":
        cfg.t_end = _parse_float(key, value)
    elif key == "dt_max":
        cfg.dt_max = _parse_float(key, value)
    elif key == "viscosity":
        if value not in ("none", "rusanov", "mars"):
            raise ConfigError(key, f"must be none|rusanov|mars, got {value!r}")
        cfg.viscosity = value
    elif key == "shock_dir":
        if value not in _SHOCK_DIR_ALIASES:
            raise ConfigError(key, f"must be fluctuation|radial, got {value!r}")
        cfg.shock_dir = _SHOCK_DIR_ALIASES[value]
    elif key == "output_every":
        cfg.output_every = _parse_int(key, value, 0)
    elif key == "output_dir":
        cfg.output_dir = value
    elif key == "order":
        cfg.order = _parse_int(key, value)
        if cfg.order not in (1, 2):
            raise ConfigError(key, "must be 1 or 2")
    else:
        raise ConfigError(key, "unknown key")


def parse_config(path=None, overrides=None):
    """(RunConfig, ProblemSpec) from a key=value file plus override flags.

    Flags override file values; unset options fall back to the problem's
    defaults.
    """
    cfg = ts.RunConfig()
    if path is not None:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(line.split()[0], f"expected key=value on line {lineno}")
                key, value = (part.strip() for part in line.split("=", 1))
                _apply_option(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            _apply_option(cfg, key, str(value))
    try:
        problem = get_problem(cfg.problem, cfg.nx, cfg.ny)
    except KeyError as exc:
        raise ConfigError("problem", str(exc))
    cfg.nx = cfg.nx or problem.nx
    cfg.ny = cfg.ny or problem.ny
    if cfg.t_end is None:
        cfg.t_end = problem.t_end
    if cfg.viscosity is None:
        cfg.viscosity = problem.viscosity
    if cfg.shock_dir is None:
        cfg.shock_dir = problem.shock_dir
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError("config", str(exc))
    return cfg, problem


def snapshot_path(output_dir, problem_name, tag):
    os.makedirs(output_dir, exist_ok=True)
    return os.path.join(output_dir, f"{problem_name}_{int(tag):06d}.vtk")


def cell_means(mesh, masses, model, state):
    """Per-cell mean density (mass/volume), volume-mean pressure and eps,
    and current centroids."""
    geom = state.geometry
    w = mesh.ref.quad_weights
    vol = hstate.evaluate_volume(mesh, masses, model, geom, state.velocity,
                                 state.specific_internal_energy)
    volume = geom.cell_volume
    mass = (masses.mass_measure).sum(axis=1)
    density = mass / volume
    pressure = np.einsum("q,cq,cq->c", w, geom.det_jac, vol["p"]) / volume
    eps_mean = np.einsum("q,cq,cq->c", w, geom.det_jac, vol["eps"]) / volume
    return density, pressure, eps_mean, geom.centroids()


def write_snapshot(mesh, masses, model, state, path, origin=(0.0, 0.0), per_dof=False):
    """Legacy-VTK ASCII snapshot plus a sibling `<path>.scatter.csv`.

    Cells are written as 4-corner quads from the corner kinematic DOFs; the
    scatter file holds `radius,density,pressure` rows (cell means by default,
    per-thermo-DOF samples with per_dof=True).
    """
    nx, ny = mesh.nx, mesh.ny
    gx = 2 * nx + 1
    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    corner_ids = (2 * jj * gx + 2 * ii).ravel()
    pts = state.geometry.positions[corner_ids]
    vel = state.velocity[corner_ids]
    cells = np.arange(mesh.n_cells)
    ci, cj = cells % nx, cells // nx
    quad = np.column_stack([
        cj * (nx + 1) + ci, cj * (nx + 1) + ci + 1,
        (cj + 1) * (nx + 1) + ci + 1, (cj + 1) * (nx + 1) + ci,
    ])
    density, pressure, eps_mean, centroids = cell_means(mesh, masses, model, state)

    lines = [
        "# vtk DataFile Version 3.0",
        f"sgh-rd snapshot t={state.time!r}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(pts)} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in pts]
    lines.append(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}")
    lines += ["4 " + " ".join(str(i) for i in row) for row in quad]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += ["9"] * mesh.n_cells
    lines.append(f"POINT_DATA {len(pts)}")
    lines.append("VECTORS velocity double")
    lines += [f"{u!r} {v!r} 0.0" for u, v in vel]
    lines.append(f"CELL_DATA {mesh.n_cells}")
    for name, arr in (("density", density), ("pressure", pressure), ("eps", eps_mean)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += [f"{v!r}" for v in arr]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

    org = np.asarray(origin, dtype=float)
    rows = ["radius,density,pressure"]
    if per_dof:
        # thermo nodes coincide with cell corners; sample rho and p there
        corners = state.geometry.cell_positions[:, [0, 2, 6, 8], :]
        radii = np.linalg.norm(corners - org, axis=-1)
        gamma = model.gamma_cells(mesh.n_cells)[:, None]
        # density at the corner reference points via the determinant ratio
        det0 = _corner_dets(mesh, mesh.initial_geometry)
        dets = _corner_dets(mesh, state.geometry)
        rho0c = masses.initial_density_dofs
        rho_c = rho0c * det0 / dets
        p_c = (gamma - 1.0) * rho_c * state.specific_internal_energy
        for c in range(mesh.n_cells):
            for e in range(4):
                rows.append(f"{radii[c, e]!r},{rho_c[c, e]!r},{p_c[c, e]!r}")
    else:
        radii = np.linalg.norm(centroids - org, axis=1)
        for c in range(mesh.n_cells):
            rows.append(f"{radii[c]!r},{density[c]!r},{pressure[c]!r}")
    with open(str(path) + ".scatter.csv", "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return path


def _corner_dets(mesh, geom):
    """detJ at the four thermo corner reference points of every cell."""
    from .bernstein import _tensor_basis, KIN_DEGREE

    _, grads = _tensor_basis(KIN_DEGREE, mesh.ref.thermo_ref_nodes)
    jac = np.einsum("ela,cld->ceda", grads, geom.cell_positions)
    return jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]


def read_snapshot(path):
    """Parse back a snapshot written by write_snapshot (round-trip checks)."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    out = {"points": [], "cells": [], "velocity": [], "scalars": {}}
    i = 0
    while i < len(tokens):
        line = tokens[i]
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            out["points"] = np.array([[float(v) for v in tokens[i + 1 + k].split()[:2]]
                                      for k in range(n)])
            i += n
        elif line.startswith("CELLS "):
            n = int(line.split()[1])
            out["cells"] = np.array([[int(v) for v in tokens[i + 1 + k].split()[1:]]
                                     for k in range(n)])
            i += n
        elif line.startswith("VECTORS velocity"):
            n = len(out["points"])
            out["velocity"] = np.array([[float(v) for v in tokens[i + 1 + k].split()[:2]]
                                        for k in range(n)])
            i += n
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            n = len(out["cells"])
            out["scalars"][name] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 1
        i += 1
    return out


def error_norms(mesh, masses, model, state, exact):
    """L1 (area-normalized) and Linf errors of u_x, u_y, p on the current mesh."""
    if exact is None:
        raise ValueError("problem provides no exact solution")
    geom = state.geometry
    w = mesh.ref.quad_weights
    vol = hstate.evaluate_volume(mesh, masses, model, geom, state.velocity,
                                 state.specific_internal_energy)
    xq = geom.quad_xy.reshape(-1, 2)
    u_ex = exact.velocity(xq).reshape(mesh.n_cells, -1, 2)
    p_ex = exact.pressure(xq).reshape(mesh.n_cells, -1)
    wdet = w[None, :] * geom.det_jac
    area = geom.cell_volume.sum()
    out = {}
    for name, num, ex in (("u_x", vol["u"][..., 0], u_ex[..., 0]),
                          ("u_y", vol["u"][..., 1], u_ex[..., 1]),
                          ("p", vol["p"], p_ex)):
        diff = np.abs(num - ex)
        out[name] = (float((wdet * diff).sum() / area), float(diff.max()))
    return out


def convergence_table(rows):
    """Rates from (h, error) rows with h decreasing; CSV `h,error,rate`.

    rate_i = log(e_i/e_{i+1}) / log(h_i/h_{i+1}); a zero error is reported
    with an `inf` rate marker.
    """
    if len(rows) < 2:
        raise ValueError("need at least two (h, error) rows")
    hs = [h for h, _ in rows]
    if any(h2 >= h1 for h1, h2 in zip(hs, hs[1:])):
        raise ValueError("h must be strictly decreasing")
    rates = []
    for (h1, e1), (h2, e2) in zip(rows, rows[1:]):
        if e2 == 0.0 or e1 == 0.0:
            rates.append(float("inf"))
        else:
            rates.append(float(np.log(e1 / e2) / np.log(h1 / h2)))
    lines = ["h,error,rate"]
    for i, (h, e) in enumerate(rows):
        rate = "" if i == 0 else repr(rates[i - 1])
        lines.append(f"{h!r},{e!r},{rate}")
    return rates, "\n".join(lines) + "\n"


def conservation_report(ledger, path=None):
    """One CSV row per recorded step; `total + flux_accum` is the closed-domain invariant."""
    lines = ["t,mass,mom_x,mom_y,kinetic,internal,total,boundary_flux_accum,max_entropy_violation"]
    for i in range(len(ledger.time)):
        mom = ledger.momentum[i]
        lines.append(",".join(repr(v) for v in (
            ledger.time[i], ledger.mass[i], mom[0], mom[1],
            ledger.kinetic[i], ledger.internal[i], ledger.total[i],
            ledger.boundary_flux_accum[i], ledger.max_entropy_violation[i])))
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _cmd_run(args):
    overrides = {
        "problem": args.problem, "nx": args.nx, "ny": args.ny, "cfl": args.cfl,
        "t_end": args.t_end, "viscosity": args.viscosity, "shock_dir": args.shock_dir,
        "output_every": args.output_every, "output_dir": args.output_dir,
        "order": args.order, "dt_max": args.dt_max,
    }
    cfg, problem = parse_config(args.config, overrides)
    result = ts.run(cfg, problem)
    print(f"{problem.name}: {result.message} after {result.steps} steps, "
          f"t={result.state.time!r}, min detJ={result.min_det_jac!r}")
    if cfg.output_dir:
        report = conservation_report(result.ledger,
                                     os.path.join(cfg.output_dir, f"{problem.name}_conservation.csv"))
        del report
    return result.status


def _cmd_convergence(args):
    meshes = [int(m) for m in args.meshes.split(",")]
    rows_by_field = {"u_x": [], "u_y": [], "p": []}
    for n in meshes:
        cfg, problem = parse_config(args.config, {
            "problem": args.problem, "nx": n, "ny": n,
            "t_end": args.t_end, "viscosity": args.viscosity,
        })
        result = ts.run(cfg, problem)
        if result.status != ts.EXIT_OK:
            print(f"run {n}x{n} failed: {result.message}", file=sys.stderr)
            return result.status
        norms = error_norms(result.mesh, result.masses, result.model,
                            result.state, problem.exact)
        h = (problem.bbox[2] - problem.bbox[0]) / n
        for name in rows_by_field:
            rows_by_field[name].append((h, norms[name][0]))
    for name, rows in rows_by_field.items():
        _, csv_text = convergence_table(rows)
        print(f"# L1({name})")
        print(csv_text, end="")
    return 0


def _cmd_verify(args):
    from .verification import run_suite

    ok = run_suite(args.suite, printer=print)
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sgh-rd",
        description="Staggered-grid Lagrangian hydrodynamics with residual distribution.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured problem")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--problem", choices=PROBLEM_NAMES, default=None)
    p_run.add_argument("--nx", type=int, default=None)
    p_run.add_argument("--ny", type=int, default=None)
    p_run.add_argument("--cfl", type=float, default=None)
    p_run.add_argument("--t-end", dest="t_end", type=float, default=None)
    p_run.add_argument("--dt-max", dest="dt_max", type=float, default=None)
    p_run.add_argument("--viscosity", choices=("none", "rusanov", "mars"), default=None)
    p_run.add_argument("--shock-dir", dest="shock_dir",
                       choices=("fluctuation", "radial"), default=None)
    p_run.add_argument("--output-every", dest="output_every", type=int, default=None)
    p_run.add_argument("--output-dir", dest="output_dir", default=None)
    p_run.add_argument("--order", type=int, choices=(1, 2), default=None)
    p_run.set_defaults(func=_cmd_run)

    p_conv = sub.add_parser("convergence", help="mesh-refinement error study")
    p_conv.add_argument("--config", default=None)
    p_conv.add_argument("--problem", choices=PROBLEM_NAMES, default="taylor-green")
    p_conv.add_argument("--meshes", default="8,16,32")
    p_conv.add_argument("--t-end", dest="t_end", type=float, default=0.5)
    p_conv.add_argument("--viscosity", choices=("none", "rusanov", "mars"), default=None)
    p_conv.set_defaults(func=_cmd_convergence)

    p_ver = sub.add_parser("verify", help="run the acceptance suite")
    p_ver.add_argument("--suite", default="paper")
    p_ver.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ts.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
