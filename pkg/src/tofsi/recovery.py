"""Superconvergent patch recovery of velocity derivatives.

Patches are centred on corner (pressure-grid) nodes.  Derivatives sampled at
the 2x2 Gauss points of every member element are fitted in the least-squares
sense by a polynomial in scaled patch coordinates, and the fit is evaluated
at the target nodes: the centre node itself plus the mid-edge and centre
nodes of the elements around it.  Nodes reached by several patches take the
mean value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from tofsi.fem_core import SHAPES2, element_geometry

BASIS_TERMS = ("1", "x", "y", "xy", "x2", "y2", "xy2", "x2y", "x2y2")
DEFAULT_OFFSETS = (1.0, -0.5)


class RecoveryError(RuntimeError):
    pass


def poly_basis(x, y, size):
    """Rows of {1, x, y, xy, x^2, y^2, xy^2, x^2y, x^2y^2} truncated to ``size``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    full = np.stack([np.ones_like(x), x, y, x * y, x * x, y * y, x * y * y, x * x * y, x * x * y * y], axis=-1)
    return full[..., :size]


def basis_size_for(n_members):
    if n_members >= 4:
        return 9
    if n_members == 3:
        return 6
    if n_members == 2:
        return 4
    raise RecoveryError(f"patch with {n_members} element(s) cannot be fitted")


@dataclass
class RecoveryPatch:
    center: int  # velocity node id of the central corner node
    members: np.ndarray  # element ids, anchor first
    targets: np.ndarray  # velocity node ids recovered by this patch
    basis_size: int
    scaling: tuple  # (s_x, t_x, s_y, t_y)

    @property
    def n_samples(self):
        return 4 * len(self.members)


def patch_scaling(anchor_coords, offsets=DEFAULT_OFFSETS):
    """Map the anchor element's extent to x' in [1, 2], y' in [-0.5, 0.5]."""
    anchor_coords = np.asarray(anchor_coords)
    x, y = anchor_coords[:, 0], anchor_coords[:, 1]
    dx = x.max() - x.min()
    dy = y.max() - y.min()
    if dx <= 0 or dy <= 0:
        raise RecoveryError("degenerate anchor element extent")
    sx = 1.0 / dx
    sy = 1.0 / dy
    return sx, -x.min() * sx + offsets[0], sy, -y.min() * sy + offsets[1]


def build_patches(mesh, active=None, offsets=DEFAULT_OFFSETS):
    """One patch per corner node touched by an active element."""
    ne = mesh.n_elements
    active = np.ones(ne, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    conn = mesh.conn
    # corner node -> elements
    star = {}
    for e in np.flatnonzero(active):
        for v in conn[e, :4]:
            star.setdefault(int(v), []).append(int(e))
    # edge adjacency between active elements (shared corner pairs)
    edge_owner = {}
    for e in np.flatnonzero(active):
        c = conn[e, :4]
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            edge_owner.setdefault(frozenset((int(c[a]), int(c[b]))), []).append(int(e))
    centroids = mesh.vcoords[conn[:, 8]]
    patches = []
    for v in sorted(star):
        members = sorted(star[v])
        targets = {v}
        for e in members:
            targets.update(int(t) for t in conn[e, 4:])
        if len(members) == 1:
            e = members[0]
            c = conn[e, :4]
            neigh = set()
            for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
                neigh.update(edge_owner[frozenset((int(c[a]), int(c[b])))])
            neigh.discard(e)
            if not neigh:
                raise RecoveryError(f"patch at node {v} has a single isolated element {e}")
            d = {n: np.hypot(*(centroids[n] - mesh.vcoords[v])) for n in neigh}
            members.append(min(sorted(neigh), key=lambda n: d[n]))
        members = np.array(members, dtype=np.int64)
        scaling = patch_scaling(mesh.vcoords[conn[members[0]]], offsets)
        patches.append(RecoveryPatch(v, members, np.array(sorted(targets), dtype=np.int64),
                                     basis_size_for(len(members)), scaling))
    return patches


@dataclass
class _PatchTables:
    """Geometry needed by both the direct and the operator routes."""

    dpsi_dx: np.ndarray  # (ne, 4, 9) at Gauss 2x2
    dpsi_dy: np.ndarray
    xq: np.ndarray  # (ne, 4, 2)


def _tables(mesh):
    geo = element_geometry(mesh.element_coords(), SHAPES2)
    return _PatchTables(geo.dpsi_dx, geo.dpsi_dy, geo.xq)


def _scaled(points, scaling):
    sx, tx, sy, ty = scaling
    return points[..., 0] * sx + tx, points[..., 1] * sy + ty


def _normal_factor(patch, P):
    A = P.T @ P
    try:
        cf = sla.cho_factor(A)
    except np.linalg.LinAlgError as exc:
        raise RecoveryError(f"singular normal matrix in patch centred at node {patch.center}") from exc
    if np.linalg.cond(A) > 1e13:
        raise RecoveryError(f"ill-conditioned normal matrix in patch centred at node {patch.center} "
                            f"(cond={np.linalg.cond(A):.2e})")
    return cf


@dataclass
class RecoveredDerivatives:
    v1x: np.ndarray
    v1y: np.ndarray
    v2x: np.ndarray
    v2y: np.ndarray
    multiplicity: np.ndarray = field(repr=False)

    def as_tuple(self):
        return self.v1x, self.v1y, self.v2x, self.v2y


def recover(mesh, patches, v1, v2):
    """Per-patch least-squares fits of the four velocity derivatives."""
    tab = _tables(mesh)
    nv = mesh.n_vnodes
    dtype = np.result_type(v1, v2, float)
    acc = np.zeros((4, nv), dtype=dtype)
    mult = np.zeros(nv, dtype=np.int64)
    conn = mesh.conn
    for patch in patches:
        m = patch.members
        xs, ys = _scaled(tab.xq[m].reshape(-1, 2), patch.scaling)
        P = poly_basis(xs, ys, patch.basis_size)
        cf = _normal_factor(patch, P)
        e1 = v1[conn[m]]  # (k, 9)
        e2 = v2[conn[m]]
        samples = np.stack([
            np.einsum("kqa,ka->kq", tab.dpsi_dx[m], e1).ravel(),
            np.einsum("kqa,ka->kq", tab.dpsi_dy[m], e1).ravel(),
            np.einsum("kqa,ka->kq", tab.dpsi_dx[m], e2).ravel(),
            np.einsum("kqa,ka->kq", tab.dpsi_dy[m], e2).ravel(),
        ], axis=1)
        a = sla.cho_solve(cf, P.T @ samples)
        xo, yo = _scaled(mesh.vcoords[patch.targets], patch.scaling)
        acc[:, patch.targets] += (poly_basis(xo, yo, patch.basis_size) @ a).T
        mult[patch.targets] += 1
    if np.any(mult == 0):
        # nodes of inactive elements only
        pass
    safe = np.maximum(mult, 1)
    out = acc / safe
    return RecoveredDerivatives(out[0], out[1], out[2], out[3], mult)


@dataclass
class RecoveryOperator:
    """Sparse maps from nodal velocities to recovered nodal x/y derivatives."""

    dx: sp.csr_matrix
    dy: sp.csr_matrix
    multiplicity: np.ndarray

    def apply(self, v1, v2):
        return RecoveredDerivatives(self.dx @ v1, self.dy @ v1, self.dx @ v2, self.dy @ v2,
                                    self.multiplicity)


def build_recovery_operator(mesh, patches):
    """Materialise (1/m) sum_patches P_O^T A^{-1} (sum_q dPsi/dx_j P_x^T) as sparse matrices."""
    tab = _tables(mesh)
    nv = mesh.n_vnodes
    mult = np.zeros(nv, dtype=np.int64)
    for patch in patches:
        mult[patch.targets] += 1
    rows, cols, vx, vy = [], [], [], []
    conn = mesh.conn
    for patch in patches:
        m = patch.members
        xs, ys = _scaled(tab.xq[m].reshape(-1, 2), patch.scaling)
        P = poly_basis(xs, ys, patch.basis_size)  # (n, nb)
        cf = _normal_factor(patch, P)
        k = len(m)
        # sample rows -> element-local node columns
        Bx = np.zeros((4 * k, 9 * k))
        By = np.zeros((4 * k, 9 * k))
        for i in range(k):
            Bx[4 * i:4 * i + 4, 9 * i:9 * i + 9] = tab.dpsi_dx[m[i]]
            By[4 * i:4 * i + 4, 9 * i:9 * i + 9] = tab.dpsi_dy[m[i]]
        xo, yo = _scaled(mesh.vcoords[patch.targets], patch.scaling)
        Po = poly_basis(xo, yo, patch.basis_size)  # (t, nb)
        G = Po @ sla.cho_solve(cf, P.T)  # (t, n)
        w = 1.0 / mult[patch.targets][:, None]
        Ox = w * (G @ Bx)
        Oy = w * (G @ By)
        nodes = conn[m].ravel()
        rows.append(np.repeat(patch.targets, nodes.size))
        cols.append(np.tile(nodes, patch.targets.size))
        vx.append(Ox.ravel())
        vy.append(Oy.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    dx = sp.csr_matrix((np.concatenate(vx), (r, c)), shape=(nv, nv))
    dy = sp.csr_matrix((np.concatenate(vy), (r, c)), shape=(nv, nv))
    dx.sum_duplicates()
    dy.sum_duplicates()
    return RecoveryOperator(dx, dy, mult)


def raw_nodal_derivatives(mesh, v1, v2):
    """Element-wise FE derivatives at nodes, averaged over sharing elements.

    Only meant for comparison plots against the recovered fields.
    """
    from tofsi.fem_core import NODE_ETA, NODE_XI, ShapeSet, QuadratureRule

    rule = QuadratureRule(np.column_stack([NODE_XI, NODE_ETA]), np.ones(9), "nodes")
    geo = element_geometry(mesh.element_coords(), ShapeSet.at(rule))
    conn = mesh.conn
    nv = mesh.n_vnodes
    out = []
    for v in (v1, v2):
        ve = v[conn]
        for d in (geo.dpsi_dx, geo.dpsi_dy):
            vals = np.einsum("eqa,ea->eq", d, ve)
            out.append(np.bincount(conn.ravel(), vals.ravel(), nv))
    cnt = np.bincount(conn.ravel(), minlength=nv)
    return tuple(o / np.maximum(cnt, 1) for o in out)
