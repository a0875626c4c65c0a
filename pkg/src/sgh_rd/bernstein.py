"""Reference-element machinery: Bernstein bases on the unit square and Gauss quadrature.

The kinematic space uses tensorized degree-2 Bernstein polynomials (9 local
DOFs, C0-conforming across cells), the thermodynamic space tensorized degree-1
Bernstein polynomials (4 local DOFs, discontinuous across cells).  All basis
and quadrature tables are precomputed once and are immutable afterwards, so a
single ReferenceElement can be shared by every element loop.
"""

import numpy as np

KIN_DEGREE = 2
THERMO_DEGREE = 1
N_KIN_LOCAL = (KIN_DEGREE + 1) ** 2   # 9
N_THERMO_LOCAL = (THERMO_DEGREE + 1) ** 2  # 4

# 3-point Gauss-Legendre rule on [0,1]: exact for polynomials of degree <= 5.
_G3_OFF = np.sqrt(15.0) / 10.0
GAUSS3_POINTS = np.array([0.5 - _G3_OFF, 0.5, 0.5 + _G3_OFF])
GAUSS3_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


class DomainError(ValueError):
    """Evaluation point lies outside the reference square."""


def bernstein_1d(degree, t):
    """Values of the 1D Bernstein basis of given degree at t (scalar or array)."""
    t = np.asarray(t, dtype=float)
    if degree == 1:
        return np.stack([1.0 - t, t], axis=-1)
    if degree == 2:
        return np.stack([(1.0 - t) ** 2, 2.0 * t * (1.0 - t), t ** 2], axis=-1)
    raise ValueError("only degrees 1 and 2 are supported")


def bernstein_1d_deriv(degree, t):
    """First derivatives of the 1D Bernstein basis at t."""
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    if degree == 1:
        return np.stack([-one, one], axis=-1)
    if degree == 2:
        return np.stack([-2.0 * (1.0 - t), 2.0 - 4.0 * t, 2.0 * t], axis=-1)
    raise ValueError("only degrees 1 and 2 are supported")


def _tensor_basis(degree, points):
    """Tensor-product values and reference gradients at the given (n,2) points.

    Local DOF ordering is l = (deg+1)*b + a for the control point (a, b).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    bx = bernstein_1d(degree, pts[:, 0])
    by = bernstein_1d(degree, pts[:, 1])
    dbx = bernstein_1d_deriv(degree, pts[:, 0])
    dby = bernstein_1d_deriv(degree, pts[:, 1])
    vals = np.einsum("na,nb->nba", bx, by).reshape(len(pts), -1)
    gx = np.einsum("na,nb->nba", dbx, by).reshape(len(pts), -1)
    gy = np.einsum("na,nb->nba", bx, dby).reshape(len(pts), -1)
    grads = np.stack([gx, gy], axis=-1)
    return vals, grads


def quadrature_rule():
    """3x3 tensor Gauss rule on [0,1]^2; positive weights summing to one."""
    px, py = np.meshgrid(GAUSS3_POINTS, GAUSS3_POINTS, indexing="xy")
    points = np.column_stack([px.ravel(), py.ravel()])
    weights = np.outer(GAUSS3_WEIGHTS, GAUSS3_WEIGHTS).ravel()
    return points, weights


def face_quadrature_rule():
    """Companion 3-point rule on each reference face, parameterized by t in [0,1].

    Face f runs along a fixed axis: f0 eta=0, f1 xi=1, f2 eta=1, f3 xi=0; the
    parameterization of opposite faces matches, so conforming neighbours see
    face quadrature points in the same order.
    """
    t = GAUSS3_POINTS
    zeros = np.zeros_like(t)
    ones = np.ones_like(t)
    pts = np.stack([
        np.column_stack([t, zeros]),   # f0: bottom
        np.column_stack([ones, t]),    # f1: right
        np.column_stack([t, ones]),    # f2: top
        np.column_stack([zeros, t]),   # f3: left
    ])
    return pts, GAUSS3_WEIGHTS.copy()


class ReferenceElement:
    """Precomputed basis/quadrature tables for the quadrilateral reference element.

    Attributes
    ----------
    quad_points, quad_weights : volume rule (9 points, weights sum to 1)
    kin_at_quad, kin_grad_at_quad : (9,9) values and (9,9,2) reference gradients
    thermo_at_quad, thermo_grad_at_quad : (9,4) and (9,4,2)
    face_points : (4,3,2) reference coordinates of the face quadrature points
    face_weights : (3,) 1D Gauss weights per face point
    kin_at_face, kin_grad_at_face : (4,3,9) and (4,3,9,2)
    thermo_at_face : (4,3,4)
    face_tangent_axis : (4,) reference axis along which each face runs
    face_normal_sign : (4,) sign applied to the rotated tangent (T_y, -T_x)
    thermo_ref_nodes : (4,2) reference locations of the thermo DOFs
    kin_at_thermo_nodes : (4,9) kinematic basis sampled at the thermo DOFs
    """

    def __init__(self):
        self.kinematic_degree = KIN_DEGREE
        self.thermo_degree = THERMO_DEGREE
        self.n_kin = N_KIN_LOCAL
        self.n_thermo = N_THERMO_LOCAL

        self.quad_points, self.quad_weights = quadrature_rule()
        self.kin_at_quad, self.kin_grad_at_quad = _tensor_basis(KIN_DEGREE, self.quad_points)
        self.thermo_at_quad, self.thermo_grad_at_quad = _tensor_basis(THERMO_DEGREE, self.quad_points)

        self.face_points, self.face_weights = face_quadrature_rule()
        kf, gkf = [], []
        tf = []
        for f in range(4):
            v, g = _tensor_basis(KIN_DEGREE, self.face_points[f])
            kf.append(v)
            gkf.append(g)
            tf.append(_tensor_basis(THERMO_DEGREE, self.face_points[f])[0])
        self.kin_at_face = np.stack(kf)
        self.kin_grad_at_face = np.stack(gkf)
        self.thermo_at_face = np.stack(tf)
        self.face_tangent_axis = np.array([0, 1, 0, 1])
        self.face_normal_sign = np.array([1.0, 1.0, -1.0, -1.0])

        self.thermo_ref_nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        self.kin_at_thermo_nodes = _tensor_basis(KIN_DEGREE, self.thermo_ref_nodes)[0]

        # Greville control-point coordinates of the local kinematic DOFs.
        g1 = np.arange(KIN_DEGREE + 1) / KIN_DEGREE
        ga, gb = np.meshgrid(g1, g1, indexing="xy")
        self.kin_ref_nodes = np.column_stack([ga.ravel(), gb.ravel()])

        for arr in self.__dict__.values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    def basis_tables(self, space):
        """(values, reference gradients) at the volume quadrature points."""
        if space == "kinematic":
            return self.kin_at_quad, self.kin_grad_at_quad
        if space == "thermo":
            return self.thermo_at_quad, self.thermo_grad_at_quad
        raise ValueError("space must be 'kinematic' or 'thermo'")


def eval_basis(space, point, tol=1e-12):
    """Evaluate one basis ('kinematic' or 'thermo') at a reference point.

    Returns (values, reference gradients); values are nonnegative, sum to one,
    and the gradients sum to the zero vector.  Points outside [0,1]^2 beyond
    the tolerance raise DomainError.
    """
    pt = np.asarray(point, dtype=float)
    if pt.shape != (2,):
        raise ValueError("point must be a 2-vector")
    if np.any(pt < -tol) or np.any(pt > 1.0 + tol):
        raise DomainError(f"point {pt} outside the reference square")
    degree = {"kinematic": KIN_DEGREE, "thermo": THERMO_DEGREE}.get(space)
    if degree is None:
        raise ValueError("space must be 'kinematic' or 'thermo'")
    vals, grads = _tensor_basis(degree, pt[None, :])
    return vals[0], grads[0]
