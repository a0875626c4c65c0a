"""Moving curvilinear mesh: connectivity, isoparametric Q2 geometry, faces.

The mesh is built once from a Cartesian grid; all later geometry lives in the
kinematic DOF positions themselves (isoparametric Q2), one position array per
time stage.  A StageGeometry caches Jacobians, determinants and face data for
one such array; during a residual pass it is read-only and shareable.
"""

from dataclasses import dataclass

import numpy as np

from .bernstein import ReferenceElement

SIDE_NAMES = ("ymin", "xmax", "ymax", "xmin")  # indexed by local face id of a boundary cell


class ConfigurationError(ValueError):
    pass


class GeometryError(ValueError):
    pass


@dataclass
class Face:
    """One mesh face; interior faces carry both incident cells."""
    left_cell: int
    left_face: int
    right_cell: int = -1   # -1 on boundary faces
    right_face: int = -1
    tag: str = ""          # boundary side name, empty for interior faces

    @property
    def is_boundary(self):
        return self.right_cell < 0


class MovingMesh:
    """Connectivity plus the frozen initial (Lagrangian) coordinates.

    kinematic DOFs live on the (2nx+1) x (2ny+1) fine grid; each cell sees 9 of
    them through `cell_kin_dofs` with local ordering l = 3*b + a.  Thermo DOFs
    are cell-local, 4 per cell, global index 4*cell + e with e = 2*b + a.
    """

    def __init__(self, nx, ny, bbox):
        if nx < 1 or ny < 1:
            raise ConfigurationError("mesh sizes must be at least 1")
        xmin, ymin, xmax, ymax = bbox
        if not (xmax > xmin and ymax > ymin):
            raise ConfigurationError("bounding box is degenerate")
        self.nx, self.ny = int(nx), int(ny)
        self.bbox = (float(xmin), float(ymin), float(xmax), float(ymax))
        self.ref = ReferenceElement()
        self.n_cells = self.nx * self.ny
        gx, gy = 2 * self.nx + 1, 2 * self.ny + 1
        self.n_kin_dofs = gx * gy
        self.n_thermo_dofs = 4 * self.n_cells

        xs = np.linspace(xmin, xmax, gx)
        ys = np.linspace(ymin, ymax, gy)
        px, py = np.meshgrid(xs, ys, indexing="xy")
        self.initial_positions = np.column_stack([px.ravel(), py.ravel()])

        cells = np.arange(self.n_cells)
        ci, cj = cells % self.nx, cells // self.nx
        a = np.arange(3)
        loc_a, loc_b = np.meshgrid(a, a, indexing="xy")
        self.cell_kin_dofs = ((2 * cj[:, None] + loc_b.ravel()[None, :]) * gx
                              + (2 * ci[:, None] + loc_a.ravel()[None, :]))
        self.cell_thermo_dofs = 4 * cells[:, None] + np.arange(4)[None, :]

        # Face-neighbour tables: neighbour cell and its matching local face,
        # -1 where the face is on the boundary.  Matching faces share the face
        # parameterization, so quadrature point j pairs with point j.
        nc = np.full((self.n_cells, 4), -1, dtype=int)
        nf = np.full((self.n_cells, 4), -1, dtype=int)
        inside = cj > 0
        nc[inside, 0] = cells[inside] - self.nx
        nf[inside, 0] = 2
        inside = ci < self.nx - 1
        nc[inside, 1] = cells[inside] + 1
        nf[inside, 1] = 3
        inside = cj < self.ny - 1
        nc[inside, 2] = cells[inside] + self.nx
        nf[inside, 2] = 0
        inside = ci > 0
        nc[inside, 3] = cells[inside] - 1
        nf[inside, 3] = 1
        self.neighbor_cell = nc
        self.neighbor_face = nf

        self.faces = []
        for c in range(self.n_cells):
            for f in range(4):
                if nc[c, f] < 0:
                    self.faces.append(Face(c, f, tag=SIDE_NAMES[f]))
                elif nc[c, f] > c:
                    self.faces.append(Face(c, f, nc[c, f], nf[c, f]))
        bmask = nc < 0
        self.boundary_cells, self.boundary_faces = np.nonzero(bmask)
        self.boundary_tags = np.array([SIDE_NAMES[f] for f in self.boundary_faces])

        # Kinematic DOF index sets per boundary side (for BC projection).
        self.side_dofs = {
            "xmin": np.arange(gy) * gx,
            "xmax": np.arange(gy) * gx + (gx - 1),
            "ymin": np.arange(gx),
            "ymax": (gy - 1) * gx + np.arange(gx),
        }

        self._initial_geometry = None

    @property
    def initial_geometry(self):
        if self._initial_geometry is None:
            self._initial_geometry = StageGeometry(self, self.initial_positions)
        return self._initial_geometry

    def gather_cellwise(self, kin_array):
        """Per-cell view (n_cells, 9, ...) of a kinematic DOF array."""
        return kin_array[self.cell_kin_dofs]


class StageGeometry:
    """Geometry caches for one stage position array.

    J is the derivative of the current position map with respect to the
    reference square coordinate; composing with the inverse initial map gives
    the Lagrangian deformation tensor, so density reconstruction only needs
    the determinant ratio detJ0/detJ.
    """

    def __init__(self, mesh, positions):
        self.mesh = mesh
        self.positions = np.asarray(positions, dtype=float)
        ref = mesh.ref
        pos = mesh.gather_cellwise(self.positions)      # (nc, 9, 2)
        self.cell_positions = pos

        self.jac = np.einsum("qla,cld->cqda", ref.kin_grad_at_quad, pos)
        self.det_jac = (self.jac[..., 0, 0] * self.jac[..., 1, 1]
                        - self.jac[..., 0, 1] * self.jac[..., 1, 0])
        inv = np.empty_like(self.jac)
        inv[..., 0, 0] = self.jac[..., 1, 1]
        inv[..., 0, 1] = -self.jac[..., 0, 1]
        inv[..., 1, 0] = -self.jac[..., 1, 0]
        inv[..., 1, 1] = self.jac[..., 0, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            self.inv_jac = inv / self.det_jac[..., None, None]
        self.quad_xy = np.einsum("ql,cld->cqd", ref.kin_at_quad, pos)
        self.grad_kin = np.einsum("qla,cqab->cqlb", ref.kin_grad_at_quad, self.inv_jac)
        self.grad_thermo = np.einsum("qea,cqab->cqeb", ref.thermo_grad_at_quad, self.inv_jac)

        # Face data: physical points, tangents along the face parameter,
        # unit outward normals and measure weights w1d*|T|.
        jf = np.einsum("fjla,cld->cfjda", ref.kin_grad_at_face, pos)
        self.face_jac_det = jf[..., 0, 0] * jf[..., 1, 1] - jf[..., 0, 1] * jf[..., 1, 0]
        ax = ref.face_tangent_axis
        tangent = np.stack([jf[:, f, :, :, ax[f]] for f in range(4)], axis=1)
        self.face_tangent = tangent
        tlen = np.linalg.norm(tangent, axis=-1)
        self.face_tangent_len = tlen
        raw = np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1)
        raw *= ref.face_normal_sign[None, :, None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            self.face_normal = raw / tlen[..., None]
        self.face_weight = ref.face_weights[None, None, :] * tlen
        self.face_xy = np.einsum("fjl,cld->cfjd", ref.kin_at_face, pos)

        self.cell_volume = np.einsum("q,cq->c", ref.quad_weights, self.det_jac)
        self.min_det_jac = float(self.det_jac.min())

    def centroids(self):
        w = self.mesh.ref.quad_weights
        num = np.einsum("q,cq,cqd->cd", w, self.det_jac, self.quad_xy)
        return num / self.cell_volume[:, None]

    def corner_positions(self):
        """Current positions of the 4 cell corners, ordered around the cell."""
        return self.cell_positions[:, [0, 2, 8, 6], :]

    def edge_lengths(self):
        """Corner-to-corner chord lengths of the 4 cell edges."""
        corners = self.corner_positions()
        nxt = np.roll(corners, -1, axis=1)
        return np.linalg.norm(nxt - corners, axis=-1)


def build_cartesian_mesh(nx, ny, bbox):
    """Cartesian nx-by-ny mesh on bbox=(xmin, ymin, xmax, ymax).

    Kinematic DOFs sit at the tensor-product Bernstein control points, which
    on the straight-sided initial mesh coincide with equispaced nodes.
    """
    return MovingMesh(nx, ny, bbox)


def geometry_at(mesh, cell, ref_point, stage):
    """Position, reference Jacobian and its determinant at one reference point.

    detJ <= 0 is reported, not raised, so diagnostics can run on tangled
    meshes.
    """
    from .bernstein import eval_basis

    vals, grads = eval_basis("kinematic", ref_point)
    pos = stage.positions[mesh.cell_kin_dofs[cell]]
    x = vals @ pos
    jac = np.einsum("la,ld->da", grads, pos)
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    return x, jac, det


def face_quadrature(mesh, face, stage):
    """Quadrature on one face: (physical point, weight*|tangent|, outward unit normal).

    Normals are outward with respect to the face's left cell; swapping the
    roles of left and right negates them.
    """
    c, f = face.left_cell, face.left_face
    if np.any(stage.face_tangent_len[c, f] <= 0.0):
        raise GeometryError(f"face {f} of cell {c} has zero length")
    return [
        (stage.face_xy[c, f, j].copy(),
         float(stage.face_weight[c, f, j]),
         stage.face_normal[c, f, j].copy())
        for j in range(stage.face_xy.shape[2])
    ]


def mesh_quality(stage):
    """(min detJ over all cells and quad points, min corner-chord edge length)."""
    return stage.min_det_jac, float(stage.edge_lengths().min())
