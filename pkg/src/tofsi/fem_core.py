"""Q2/Q1 Lagrange shape functions, Gauss rules and isoparametric maps.

Node ordering (used everywhere in the package)::

    3 --- 6 --- 2
    |           |
    7     8     5
    |           |
    0 --- 4 --- 1

Corners counter-clockwise, then mid-edges counter-clockwise starting at the
bottom edge, then the centre node.  The four pressure nodes are the corners
0..3 in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

_RANGE_TOL = 1e-12

# reference coordinates of the 9 velocity nodes
NODE_XI = np.array([-1.0, 1.0, 1.0, -1.0, 0.0, 1.0, 0.0, -1.0, 0.0])
NODE_ETA = np.array([-1.0, -1.0, 1.0, 1.0, -1.0, 0.0, 1.0, 0.0, 0.0])

# local velocity-node triplets of each edge, traversed counter-clockwise
EDGE_NODES = {
    "bottom": (0, 4, 1),
    "right": (1, 5, 2),
    "top": (2, 6, 3),
    "left": (3, 7, 0),
}
EDGES = ("bottom", "right", "top", "left")


class DomainError(ValueError):
    """Reference coordinate outside the parent element."""


class InvertedElementError(ValueError):
    """Non-positive Jacobian determinant."""

    def __init__(self, element, detj):
        self.element = element
        self.detj = detj
        super().__init__(f"element {element} is inverted or degenerate (detJ={detj:.3e})")


class BasisKind(str, Enum):
    VELOCITY = "velocity"
    PRESSURE = "pressure"


def _lagrange2(s):
    s = np.asarray(s)
    return np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)], axis=-1)


def _lagrange2_d(s):
    s = np.asarray(s)
    return np.stack([s - 0.5, -2.0 * s, s + 0.5], axis=-1)


def _lagrange2_dd(s):
    s = np.asarray(s)
    one = np.ones_like(s, dtype=float)
    return np.stack([one, -2.0 * one, one], axis=-1)


# index of each node's 1D factor (0 -> -1, 1 -> 0, 2 -> +1)
_IX = (NODE_XI + 1).astype(int)
_IY = (NODE_ETA + 1).astype(int)
_PXI = np.array([-1.0, 1.0, 1.0, -1.0])
_PETA = np.array([-1.0, -1.0, 1.0, 1.0])


def _check_range(xi, eta):
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lim = 1.0 + _RANGE_TOL
    if np.any(np.abs(xi) > lim) or np.any(np.abs(eta) > lim):
        raise DomainError(f"reference coordinate out of [-1,1]^2: xi={xi}, eta={eta}")


def eval_shapes(kind, xi, eta):
    """Basis values at ``(xi, eta)``; 9 for velocity, 4 for pressure."""
    _check_range(xi, eta)
    kind = BasisKind(kind)
    if kind is BasisKind.VELOCITY:
        return _lagrange2(xi)[..., _IX] * _lagrange2(eta)[..., _IY]
    return 0.25 * (1.0 + _PXI * np.asarray(xi)[..., None]) * (1.0 + _PETA * np.asarray(eta)[..., None])


def eval_shape_derivs(kind, xi, eta):
    """Return ``(dN/dxi, dN/deta)`` at ``(xi, eta)``."""
    _check_range(xi, eta)
    kind = BasisKind(kind)
    if kind is BasisKind.VELOCITY:
        lx, ly = _lagrange2(xi), _lagrange2(eta)
        dx, dy = _lagrange2_d(xi), _lagrange2_d(eta)
        return dx[..., _IX] * ly[..., _IY], lx[..., _IX] * dy[..., _IY]
    xi = np.asarray(xi)[..., None]
    eta = np.asarray(eta)[..., None]
    return 0.25 * _PXI * (1.0 + _PETA * eta), 0.25 * _PETA * (1.0 + _PXI * xi)


def eval_velocity_second_derivs(xi, eta):
    """Second reference derivatives of the 9 velocity functions: (N_xixi, N_xieta, N_etaeta)."""
    _check_range(xi, eta)
    lx, ly = _lagrange2(xi), _lagrange2(eta)
    dx, dy = _lagrange2_d(xi), _lagrange2_d(eta)
    ddx, ddy = _lagrange2_dd(xi), _lagrange2_dd(eta)
    return (ddx[..., _IX] * ly[..., _IY],
            dx[..., _IX] * dy[..., _IY],
            lx[..., _IX] * ddy[..., _IY])


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) for area rules, (nq,) for the edge rule
    weights: np.ndarray
    order: str


def _gauss_area(n, tag):
    s, w = np.polynomial.legendre.leggauss(n)
    xi, eta = np.meshgrid(s, s, indexing="xy")
    ww = np.outer(w, w)
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return QuadratureRule(pts, ww.ravel(), tag)


def gauss_rule(n):
    """Tensor Gauss-Legendre rule with ``n`` points per direction."""
    return _gauss_area(n, f"Gauss{n}x{n}")


GAUSS2 = _gauss_area(2, "Gauss2x2")
GAUSS3 = _gauss_area(3, "Gauss3x3")
_es, _ew = np.polynomial.legendre.leggauss(3)
EDGE3 = QuadratureRule(_es, _ew, "Edge3")


@dataclass(frozen=True)
class ShapeSet:
    """Basis tables tabulated at the points of one quadrature rule."""

    rule: QuadratureRule
    psi: np.ndarray  # (nq, 9)
    dpsi_dxi: np.ndarray
    dpsi_deta: np.ndarray
    phi: np.ndarray  # (nq, 4)
    dphi_dxi: np.ndarray
    dphi_deta: np.ndarray

    @classmethod
    def at(cls, rule):
        xi, eta = rule.points[:, 0], rule.points[:, 1]
        psi = eval_shapes("velocity", xi, eta)
        dpx, dpe = eval_shape_derivs("velocity", xi, eta)
        phi = eval_shapes("pressure", xi, eta)
        dfx, dfe = eval_shape_derivs("pressure", xi, eta)
        for a in (psi, dpx, dpe, phi, dfx, dfe):
            a.setflags(write=False)
        return cls(rule, psi, dpx, dpe, phi, dfx, dfe)


SHAPES3 = ShapeSet.at(GAUSS3)
SHAPES2 = ShapeSet.at(GAUSS2)


def edge_reference_points(edge, s):
    """Map the edge coordinate ``s`` (CCW) to ``(xi, eta)``."""
    s = np.asarray(s, dtype=float)
    if edge == "bottom":
        return s, -np.ones_like(s)
    if edge == "right":
        return np.ones_like(s), s
    if edge == "top":
        return -s, np.ones_like(s)
    if edge == "left":
        return -np.ones_like(s), -s
    raise ValueError(f"unknown edge {edge!r}")


def element_jacobian(coords, xi, eta, element=None):
    """Jacobian of the 9-node map at a single point.

    ``coords`` is a (9, 2) array of nodal coordinates.  Returns ``(J, detJ, invJ)``
    with ``J[i, j] = d x_j / d xi_i``.
    """
    coords = np.asarray(coords)
    dxi, deta = eval_shape_derivs("velocity", xi, eta)
    J = np.array([dxi @ coords, deta @ coords])
    detj = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if not np.real(detj) > 0:
        raise InvertedElementError(element, float(np.real(detj)))
    inv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / detj
    return J, detj, inv


def edge_jacobian(coords, edge, s):
    """Length scale ``|J_s| = |dx/ds|`` along one edge of the element."""
    if edge not in EDGE_NODES:
        raise ValueError(f"unknown edge {edge!r}")
    xi, eta = edge_reference_points(edge, s)
    dxi, deta = eval_shape_derivs("velocity", xi, eta)
    # d(xi,eta)/ds for the CCW parametrisation
    sx, se = {"bottom": (1, 0), "right": (0, 1), "top": (-1, 0), "left": (0, -1)}[edge]
    t = (sx * dxi + se * deta) @ np.asarray(coords)
    js = np.hypot(t[..., 0], t[..., 1])
    if np.any(js <= 0):
        raise ValueError(f"degenerate {edge} edge (zero length)")
    return js


def edge_tangent(coords, edge, s):
    """Unnormalised CCW tangent ``dx/ds`` on an edge."""
    xi, eta = edge_reference_points(edge, s)
    dxi, deta = eval_shape_derivs("velocity", xi, eta)
    sx, se = {"bottom": (1, 0), "right": (0, 1), "top": (-1, 0), "left": (0, -1)}[edge]
    return (sx * dxi + se * deta) @ np.asarray(coords)


@dataclass
class ElementGeometry:
    """Per-element physical derivative tables at one rule, for many elements.

    Arrays are shaped ``(ne, nq, ...)``.
    """

    shapes: ShapeSet
    dpsi_dx: np.ndarray  # (ne, nq, 9)
    dpsi_dy: np.ndarray
    dphi_dx: np.ndarray  # (ne, nq, 4)
    dphi_dy: np.ndarray
    detj: np.ndarray  # (ne, nq)
    wdet: np.ndarray  # detJ * weight
    xq: np.ndarray  # (ne, nq, 2) physical quadrature points
    invj: np.ndarray  # (ne, nq, 2, 2)


def element_geometry(coords, shapes=SHAPES3, elements=None):
    """Vectorised isoparametric map for elements with nodal coords (ne, 9, 2)."""
    coords = np.asarray(coords, dtype=float)
    J = np.empty(coords.shape[:1] + (shapes.psi.shape[0], 2, 2))
    J[:, :, 0, :] = np.einsum("qa,ead->eqd", shapes.dpsi_dxi, coords)
    J[:, :, 1, :] = np.einsum("qa,ead->eqd", shapes.dpsi_deta, coords)
    detj = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(detj <= 0):
        bad = np.argwhere(detj <= 0)[0]
        eid = bad[0] if elements is None else elements[bad[0]]
        raise InvertedElementError(int(eid), float(detj[tuple(bad)]))
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / detj
    inv[..., 0, 1] = -J[..., 0, 1] / detj
    inv[..., 1, 0] = -J[..., 1, 0] / detj
    inv[..., 1, 1] = J[..., 0, 0] / detj
    # [d/dx, d/dy] = inv @ [d/dxi, d/deta]
    dpx = inv[..., 0, 0, None] * shapes.dpsi_dxi + inv[..., 0, 1, None] * shapes.dpsi_deta
    dpy = inv[..., 1, 0, None] * shapes.dpsi_dxi + inv[..., 1, 1, None] * shapes.dpsi_deta
    dfx = inv[..., 0, 0, None] * shapes.dphi_dxi + inv[..., 0, 1, None] * shapes.dphi_deta
    dfy = inv[..., 1, 0, None] * shapes.dphi_dxi + inv[..., 1, 1, None] * shapes.dphi_deta
    xq = np.einsum("qa,ead->eqd", shapes.psi, coords)
    return ElementGeometry(shapes, dpx, dpy, dfx, dfy, detj,
                           detj * shapes.rule.weights, xq, inv)


def velocity_hessian(coords, xi, eta):
    """Physical second derivatives of the velocity basis at one point.

    Returns ``(N_xx, N_xy, N_yy)`` each of length 9, including the curvature
    terms of a non-affine map.
    """
    coords = np.asarray(coords, dtype=float)
    _, _, inv = element_jacobian(coords, xi, eta)
    dxi, deta = eval_shape_derivs("velocity", xi, eta)
    hxx, hxe, hee = eval_velocity_second_derivs(xi, eta)
    dNx = inv[0, 0] * dxi + inv[0, 1] * deta
    dNy = inv[1, 0] * dxi + inv[1, 1] * deta
    # reference Hessian of N minus the geometric part
    href = np.array([[hxx, hxe], [hxe, hee]])  # (2,2,9)
    hx = np.array([[hxx @ coords[:, 0], hxe @ coords[:, 0]], [hxe @ coords[:, 0], hee @ coords[:, 0]]])
    hy = np.array([[hxx @ coords[:, 1], hxe @ coords[:, 1]], [hxe @ coords[:, 1], hee @ coords[:, 1]]])
    corr = href - hx[:, :, None] * dNx - hy[:, :, None] * dNy
    # d2N/dx_i dx_j = sum_ab inv[i,a] inv[j,b] corr[a,b]
    H = np.einsum("ia,jb,abn->ijn", inv, inv, corr)
    return H[0, 0], H[0, 1], H[1, 1]
