"""The five benchmark problems: initial fields, sources, boundary conditions
and exact/reference solutions.

Field callables are vectorized over an (N, 2) array of points.  Thermo DOFs
are sampled pointwise at the cell corner nodes, except for piecewise-constant
data (triple point), which is sampled at the cell centroid so region
boundaries stay aligned with cell faces.
"""

from dataclasses import dataclass, field

import numpy as np

PROBLEM_NAMES = ("taylor-green", "gresho", "sedov", "noh", "triple-point")

SEDOV_SOURCE_ENERGY = 0.244816   # origin-cell deposit; total blast energy ~ 1 over the full plane


@dataclass
class ProblemSpec:
    name: str
    bbox: tuple
    gamma: float
    init_velocity: object
    init_density: object
    init_energy: object            # specific internal energy field
    bc: dict
    energy_source: object = None
    exact: object = None
    reference: object = None
    t_end: float = 1.0
    nx: int = 16
    ny: int = 16
    viscosity: str = "mars"
    shock_dir: str = "velocity_fluctuation"
    origin: tuple = (0.0, 0.0)
    cellwise_thermo_init: bool = False
    special_cells: object = None   # callable(mesh) -> [(cell_id, eps_value), ...]


class SteadyExact:
    """Exact (u, p) handle for problems whose Eulerian fields are steady."""

    def __init__(self, velocity, pressure):
        self.velocity = velocity
        self.pressure = pressure


class NohReference:
    """1D analytical Noh solution mapped to cylindrical radius."""

    gamma = 5.0 / 3.0

    def shock_radius(self, t):
        return t / 3.0

    def density(self, r, t):
        r = np.asarray(r, dtype=float)
        pre = 1.0 + t / np.maximum(r, 1e-300)
        return np.where(r > t / 3.0, pre, 16.0)

    def pressure(self, r, t):
        r = np.asarray(r, dtype=float)
        return np.where(r > t / 3.0, 0.0, 16.0 / 3.0)


def _points(x):
    return np.atleast_2d(np.asarray(x, dtype=float))


def make_taylor_green():
    """Manufactured steady vortex in a unit box; no artificial viscosity."""
    gamma = 5.0 / 3.0

    def velocity(x):
        p = _points(x)
        return np.column_stack([
            np.sin(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]),
            -np.cos(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]),
        ])

    def pressure(x):
        p = _points(x)
        return 0.25 * (np.cos(2 * np.pi * p[:, 0]) + np.cos(2 * np.pi * p[:, 1])) + 1.0

    def density(x):
        return np.ones(len(_points(x)))

    def energy(x):
        return pressure(x) / ((gamma - 1.0) * density(x))

    def source(x):
        p = _points(x)
        return (3.0 * np.pi / 8.0) * (
            np.cos(3 * np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1])
            - np.cos(np.pi * p[:, 0]) * np.cos(3 * np.pi * p[:, 1]))

    return ProblemSpec(
        name="taylor-green", bbox=(0.0, 0.0, 1.0, 1.0), gamma=gamma,
        init_velocity=velocity, init_density=density, init_energy=energy,
        bc={s: "wall" for s in ("xmin", "xmax", "ymin", "ymax")},
        energy_source=source, exact=SteadyExact(velocity, pressure),
        t_end=1.25, nx=16, ny=16, viscosity="none",
    )


def gresho_pressure(r):
    r = np.asarray(r, dtype=float)
    inner = 5.0 + 12.5 * r ** 2
    middle = 9.0 - 4.0 * np.log(0.2) + 12.5 * r ** 2 - 20.0 * r + 4.0 * np.log(np.maximum(r, 1e-300))
    outer = 3.0 + 4.0 * np.log(2.0)
    return np.where(r < 0.2, inner, np.where(r < 0.4, middle, outer))


def gresho_angular_velocity(r):
    r = np.asarray(r, dtype=float)
    return np.where(r < 0.2, 5.0 * r, np.where(r < 0.4, 2.0 - 5.0 * r, 0.0))


def make_gresho():
    """Rotating vortex with centrifugal force balanced by the pressure gradient."""
    gamma = 5.0 / 3.0
    center = np.array([0.5, 0.5])

    def velocity(x):
        p = _points(x) - center
        r = np.linalg.norm(p, axis=1)
        uphi = gresho_angular_velocity(r)
        safe = np.maximum(r, 1e-300)
        return np.column_stack([-uphi * p[:, 1] / safe, uphi * p[:, 0] / safe])

    def pressure(x):
        return gresho_pressure(np.linalg.norm(_points(x) - center, axis=1))

    def density(x):
        return np.ones(len(_points(x)))

    def energy(x):
        return pressure(x) / ((gamma - 1.0) * density(x))

    return ProblemSpec(
        name="gresho", bbox=(0.0, 0.0, 1.0, 1.0), gamma=gamma,
        init_velocity=velocity, init_density=density, init_energy=energy,
        bc={s: "wall" for s in ("xmin", "xmax", "ymin", "ymax")},
        exact=SteadyExact(velocity, pressure),
        t_end=0.65, nx=16, ny=16, viscosity="mars", origin=(0.5, 0.5),
    )


def make_sedov(nx=16, ny=16):
    """Point blast: cold background with the source energy deposited in the
    origin cell, scaled by that cell's volume."""
    gamma = 1.4
    background_p = 1e-6

    def velocity(x):
        return np.zeros_like(_points(x))

    def density(x):
        return np.ones(len(_points(x)))

    def energy(x):
        return np.full(len(_points(x)), background_p / (gamma - 1.0))

    def origin_cell_energy(mesh):
        geo = mesh.initial_geometry
        cell = int(np.argmin(np.linalg.norm(geo.centroids(), axis=1)))
        v_or = float(geo.cell_volume[cell])
        return [(cell, SEDOV_SOURCE_ENERGY / v_or)]

    return ProblemSpec(
        name="sedov", bbox=(0.0, 0.0, 1.2, 1.2), gamma=gamma,
        init_velocity=velocity, init_density=density, init_energy=energy,
        bc={s: "wall" for s in ("xmin", "xmax", "ymin", "ymax")},
        t_end=1.0, nx=nx, ny=ny, viscosity="mars", shock_dir="radial_velocity",
        special_cells=origin_cell_energy,
    )


def make_noh():
    """Cold gas streaming toward the origin; stagnation shock, plateau rho=16."""
    gamma = 5.0 / 3.0

    def velocity(x):
        p = _points(x)
        r = np.linalg.norm(p, axis=1)
        safe = np.maximum(r, 1e-300)
        u = -p / safe[:, None]
        u[r < 1e-12] = 0.0
        return u

    def density(x):
        return np.ones(len(_points(x)))

    def energy(x):
        return np.zeros(len(_points(x)))

    return ProblemSpec(
        name="noh", bbox=(0.0, 0.0, 1.0, 1.0), gamma=gamma,
        init_velocity=velocity, init_density=density, init_energy=energy,
        bc={"xmin": "wall", "ymin": "wall", "xmax": "fixed", "ymax": "fixed"},
        reference=NohReference(),
        t_end=0.6, nx=50, ny=50, viscosity="mars", shock_dir="radial_velocity",
    )


def make_triple_point():
    """Three gamma-law regions; a shock driven through two connected regions
    spins up a vortex at the triple point."""
    gamma = 1.4

    def region(x):
        p = _points(x)
        left = p[:, 0] < 1.0
        top = p[:, 1] >= 1.5
        return np.where(left, 0, np.where(top, 1, 2))

    def velocity(x):
        return np.zeros_like(_points(x))

    def density(x):
        return np.choose(region(x), [1.0, 0.125, 1.0])

    def energy(x):
        return np.choose(region(x), [2.0, 1.6, 0.25])

    return ProblemSpec(
        name="triple-point", bbox=(0.0, 0.0, 7.0, 3.0), gamma=gamma,
        init_velocity=velocity, init_density=density, init_energy=energy,
        bc={s: "wall" for s in ("xmin", "xmax", "ymin", "ymax")},
        t_end=3.0, nx=56, ny=24, viscosity="mars",
        cellwise_thermo_init=True,
    )


_FACTORIES = {
    "taylor-green": lambda nx, ny: make_taylor_green(),
    "gresho": lambda nx, ny: make_gresho(),
    "sedov": lambda nx, ny: make_sedov(nx or 16, ny or 16),
    "noh": lambda nx, ny: make_noh(),
    "triple-point": lambda nx, ny: make_triple_point(),
}


def get_problem(name, nx=None, ny=None):
    if name not in _FACTORIES:
        raise KeyError(f"unknown problem {name!r}; choose from {'|'.join(PROBLEM_NAMES)}")
    spec = _FACTORIES[name](nx, ny)
    if nx:
        spec.nx = nx
    if ny:
        spec.ny = ny
    return spec


def initialize_state(mesh, problem):
    """(velocity DOFs, eps DOFs, rho0 DOFs) sampled from the problem fields.

    Kinematic DOF coefficients are sampled at the control-point locations;
    this reproduces linear fields exactly and is second-order accurate for
    smooth ones.
    """
    velocity = problem.init_velocity(mesh.initial_positions)
    geo = mesh.initial_geometry
    corner_xy = geo.cell_positions[:, [0, 2, 6, 8], :]   # thermo nodes (0,0),(1,0),(0,1),(1,1)
    if problem.cellwise_thermo_init:
        sample = np.repeat(geo.centroids()[:, None, :], 4, axis=1)
    else:
        sample = corner_xy
    flat = sample.reshape(-1, 2)
    eps = problem.init_energy(flat).reshape(mesh.n_cells, 4)
    rho0 = problem.init_density(flat).reshape(mesh.n_cells, 4)
    if problem.special_cells is not None:
        for cell, value in problem.special_cells(mesh):
            eps[cell, :] = value
    return np.asarray(velocity, dtype=float), eps, rho0
