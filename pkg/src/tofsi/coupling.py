"""Fluid-to-solid force coupling.

The nodal forces on an element are linear in its nodal pressures and in the
(recovered or raw) velocity derivatives, so every mode is stored as a pair of
element blocks

    f_e = G_p[e] p_e + G_v[e] w_e

where ``w_e`` stacks ``[v1,x | v1,y | v2,x | v2,y]`` at the element's 9 nodes
(recovered path) or ``[v1 | v2]`` (raw path).  Global loads and the force
Jacobians used by the adjoint are assembled from the same blocks.

Normals are taken outward from the solid element, so a positive pressure
pushes on the element.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from tofsi.fem_core import (EDGE3, EDGES, SHAPES3, edge_reference_points, element_geometry,
                            eval_shape_derivs, eval_shapes, velocity_hessian)
from tofsi.fluid import _check_density
from tofsi.mesh import dofmap_for


class StressMode(str, Enum):
    PRESSURE = "pressure"
    TOTAL_STRESS = "total_stress"


class IntegralForm(str, Enum):
    SURFACE = "surface"
    VOLUME = "volume"


class CouplingError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingConfig:
    stress_mode: StressMode = StressMode.PRESSURE
    integral_form: IntegralForm = IntegralForm.VOLUME
    upsilon_max: float = 1.0
    upsilon_min: float = 0.0
    p_upsilon: float = 1.0
    use_recovered_derivatives: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stress_mode", StressMode(self.stress_mode))
        object.__setattr__(self, "integral_form", IntegralForm(self.integral_form))
        if not self.upsilon_max >= self.upsilon_min >= 0:
            raise ValueError("need upsilon_max >= upsilon_min >= 0")
        if not self.p_upsilon >= 1:
            raise ValueError(f"p_upsilon must be >= 1, got {self.p_upsilon}")


def coupling_filter(rho, cfg):
    """Return ``(Y, dY/drho)`` for Y = Y_min + (Y_max - Y_min) rho^p."""
    _check_density(rho)
    rho = np.asarray(rho)
    span = cfg.upsilon_max - cfg.upsilon_min
    return (cfg.upsilon_min + span * rho ** cfg.p_upsilon,
            span * cfg.p_upsilon * rho ** (cfg.p_upsilon - 1.0))


@dataclass
class InterfaceSet:
    """Elements that receive fluid forces, with per-edge outward normals."""

    elements: np.ndarray  # (k,)
    normals: np.ndarray  # (k, 4 edges, 3 points, 2), unit
    jac_s: np.ndarray  # (k, 4, 3) surface Jacobian |J_s|

    def __len__(self):
        return self.elements.size


def build_interface(mesh, elements=None):
    """Every edge of every solid element, normals outward from that element.

    ``elements`` defaults to design plus non-design elements.
    """
    if elements is None:
        elements = mesh.solid_elements
    elements = np.asarray(elements, dtype=np.int64)
    coords = mesh.element_coords(elements)
    s = EDGE3.points
    normals = np.empty((elements.size, 4, s.size, 2))
    jac = np.empty((elements.size, 4, s.size))
    for k, edge in enumerate(EDGES):
        xi, eta = edge_reference_points(edge, s)
        dxi, deta = eval_shape_derivs("velocity", xi, eta)
        sx, se = {"bottom": (1, 0), "right": (0, 1), "top": (-1, 0), "left": (0, -1)}[edge]
        t = np.einsum("qa,ead->eqd", sx * dxi + se * deta, coords)
        js = np.hypot(t[..., 0], t[..., 1])
        if np.any(js <= 0):
            raise CouplingError(f"degenerate {edge} edge on interface")
        jac[:, k] = js
        # CCW traversal: outward normal is the tangent turned clockwise
        normals[:, k, :, 0] = t[..., 1] / js
        normals[:, k, :, 1] = -t[..., 0] / js
    return InterfaceSet(elements, normals, jac)


@dataclass
class ForceBlocks:
    """Element force blocks for one (mode, form, path) combination."""

    elements: np.ndarray
    gp: np.ndarray  # (k, 18, 4)
    gv: np.ndarray | None  # (k, 18, 36) recovered, (k, 18, 18) raw, None for pressure mode
    recovered: bool


def _surface_blocks(mesh, iface, mu, mode, recovered):
    k = len(iface)
    gp = np.zeros((k, 18, 4))
    total = mode == StressMode.TOTAL_STRESS
    gv = np.zeros((k, 18, 36 if recovered else 18)) if total else None
    coords = mesh.element_coords(iface.elements)
    w = EDGE3.weights
    for j, edge in enumerate(EDGES):
        xi, eta = edge_reference_points(edge, EDGE3.points)
        psi = eval_shapes("velocity", xi, eta)  # (3, 9)
        phi = eval_shapes("pressure", xi, eta)  # (3, 4)
        nx = iface.normals[:, j, :, 0]
        ny = iface.normals[:, j, :, 1]
        wj = iface.jac_s[:, j] * w  # (k, 3)
        gp[:, :9] += np.einsum("eq,qa,qb->eab", wj * nx, psi, -phi)
        gp[:, 9:] += np.einsum("eq,qa,qb->eab", wj * ny, psi, -phi)
        if not total:
            continue
        if recovered:
            base = np.einsum("eq,qa,qb->eqab", wj, psi, psi)  # Psi Psi^T per point
            nxb = np.einsum("eq,eqab->eab", nx, base)
            nyb = np.einsum("eq,eqab->eab", ny, base)
            # columns: 0:9 v1x, 9:18 v1y, 18:27 v2x, 27:36 v2y
            gv[:, :9, 0:9] += 2 * mu * nxb
            gv[:, :9, 9:18] += mu * nyb
            gv[:, :9, 18:27] += mu * nyb
            gv[:, 9:, 27:36] += 2 * mu * nyb
            gv[:, 9:, 9:18] += mu * nxb
            gv[:, 9:, 18:27] += mu * nxb
        else:
            dxi, deta = eval_shape_derivs("velocity", xi, eta)
            geo_inv = _edge_inverse_jacobians(coords, dxi, deta)
            Nx = geo_inv[..., 0, 0, None] * dxi + geo_inv[..., 0, 1, None] * deta  # (k, 3, 9)
            Ny = geo_inv[..., 1, 0, None] * dxi + geo_inv[..., 1, 1, None] * deta
            bx = lambda s, D: np.einsum("eq,qa,eqb->eab", wj * s, psi, D)  # noqa: E731
            # columns: 0:9 v1, 9:18 v2
            gv[:, :9, :9] += 2 * mu * bx(nx, Nx) + mu * bx(ny, Ny)
            gv[:, :9, 9:] += mu * bx(ny, Nx)
            gv[:, 9:, :9] += mu * bx(nx, Ny)
            gv[:, 9:, 9:] += 2 * mu * bx(ny, Ny) + mu * bx(nx, Nx)
    return gp, gv


def _edge_inverse_jacobians(coords, dxi, deta):
    J = np.empty(coords.shape[:1] + (dxi.shape[0], 2, 2))
    J[:, :, 0, :] = np.einsum("qa,ead->eqd", dxi, coords)
    J[:, :, 1, :] = np.einsum("qa,ead->eqd", deta, coords)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    return inv


def _volume_blocks(mesh, iface, mu, mode, recovered):
    coords = mesh.element_coords(iface.elements)
    geo = element_geometry(coords, SHAPES3, iface.elements)
    psi, phi = SHAPES3.psi, SHAPES3.phi
    Nx, Ny, Fx, Fy, wd = geo.dpsi_dx, geo.dpsi_dy, geo.dphi_dx, geo.dphi_dy, geo.wdet
    k = len(iface)
    gp = np.zeros((k, 18, 4))
    gp[:, :9] = -np.einsum("eq,eqa,qb->eab", wd, Nx, phi) - np.einsum("eq,qa,eqb->eab", wd, psi, Fx)
    gp[:, 9:] = -np.einsum("eq,eqa,qb->eab", wd, Ny, phi) - np.einsum("eq,qa,eqb->eab", wd, psi, Fy)
    if mode != StressMode.TOTAL_STRESS:
        return gp, None
    if recovered:
        gv = np.zeros((k, 18, 36))
        # grad(test) * Psi^T wbar  +  Psi * grad(Psi)^T wbar
        ax = np.einsum("eq,eqa,qb->eab", wd, Nx, psi) + np.einsum("eq,qa,eqb->eab", wd, psi, Nx)
        ay = np.einsum("eq,eqa,qb->eab", wd, Ny, psi) + np.einsum("eq,qa,eqb->eab", wd, psi, Ny)
        gv[:, :9, 0:9] = 2 * mu * ax
        gv[:, :9, 9:18] = mu * ay
        gv[:, :9, 18:27] = mu * ay
        gv[:, 9:, 9:18] = mu * ax
        gv[:, 9:, 18:27] = mu * ax
        gv[:, 9:, 27:36] = 2 * mu * ay
        return gp, gv
    gv = np.zeros((k, 18, 18))
    kxx = np.einsum("eq,eqa,eqb->eab", wd, Nx, Nx)
    kyy = np.einsum("eq,eqa,eqb->eab", wd, Ny, Ny)
    kxy = np.einsum("eq,eqa,eqb->eab", wd, Nx, Ny)
    kyx = np.einsum("eq,eqa,eqb->eab", wd, Ny, Nx)
    hxx, hxy, hyy = _element_hessians(coords)
    mxx = np.einsum("eq,qa,eqb->eab", wd, psi, hxx)
    mxy = np.einsum("eq,qa,eqb->eab", wd, psi, hxy)
    myy = np.einsum("eq,qa,eqb->eab", wd, psi, hyy)
    gv[:, :9, :9] = mu * (2 * kxx + kyy) + mu * (2 * mxx + myy)
    gv[:, :9, 9:] = mu * kyx + mu * mxy
    gv[:, 9:, :9] = mu * kxy + mu * mxy
    gv[:, 9:, 9:] = mu * (kxx + 2 * kyy) + mu * (mxx + 2 * myy)
    return gp, gv


def _element_hessians(coords):
    """Physical second derivatives of Psi at the 3x3 points, (k, 9, 9) each."""
    pts = SHAPES3.rule.points
    k = coords.shape[0]
    out = np.zeros((3, k, pts.shape[0], 9))
    for e in range(k):
        for q, (xi, eta) in enumerate(pts):
            out[:, e, q] = velocity_hessian(coords[e], xi, eta)
    return out[0], out[1], out[2]


def force_blocks(mesh, iface, mu, cfg, recovered=None):
    if recovered is None:
        recovered = cfg.use_recovered_derivatives
    if cfg.stress_mode == StressMode.TOTAL_STRESS and cfg.use_recovered_derivatives is False and recovered:
        raise CouplingError("inconsistent recovery flag")
    build = _surface_blocks if cfg.integral_form == IntegralForm.SURFACE else _volume_blocks
    gp, gv = build(mesh, iface, mu, cfg.stress_mode, recovered)
    return ForceBlocks(iface.elements, gp, gv, recovered)


def _stack_recovered(rec, conn_e):
    """(k, 36) element-local ``[v1x | v1y | v2x | v2y]``."""
    return np.hstack([rec.v1x[conn_e], rec.v1y[conn_e], rec.v2x[conn_e], rec.v2y[conn_e]])


def element_forces(mesh, blocks, state, recovered=None):
    """Unfiltered element forces (k, 18) from a fluid state.

    ``recovered`` must hold recovered nodal derivatives on the recovered
    total-stress path.
    """
    e = blocks.elements
    conn = mesh.conn[e]
    f = np.einsum("eab,eb->ea", blocks.gp, state.p[mesh.pconn[e]])
    if blocks.gv is None:
        return f
    if blocks.recovered:
        if recovered is None:
            raise CouplingError("total-stress coupling needs recovered derivatives")
        w = _stack_recovered(recovered, conn)
    else:
        w = np.hstack([state.v1[conn], state.v2[conn]])
    return f + np.einsum("eab,eb->ea", blocks.gv, w)


def surface_forces(mesh, iface, state, recovered, mu, cfg):
    if cfg.integral_form != IntegralForm.SURFACE:
        cfg = _with(cfg, integral_form=IntegralForm.SURFACE)
    return element_forces(mesh, force_blocks(mesh, iface, mu, cfg), state, recovered)


def volume_forces(mesh, iface, state, recovered, mu, cfg):
    if cfg.integral_form != IntegralForm.VOLUME:
        cfg = _with(cfg, integral_form=IntegralForm.VOLUME)
    return element_forces(mesh, force_blocks(mesh, iface, mu, cfg), state, recovered)


def _with(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


def element_upsilon(mesh, blocks, rho_elem, cfg):
    """Filter values for the interface elements from an element density field."""
    return coupling_filter(np.asarray(rho_elem)[blocks.elements], cfg)


def assemble_coupled_load(mesh, blocks, forces, rho_elem, cfg):
    """Scale each element block by Y(rho_e) and scatter into the solid vector."""
    Y, _ = element_upsilon(mesh, blocks, rho_elem, cfg)
    edofs = dofmap_for(mesh).solid_element_dofs(mesh)[blocks.elements]
    vals = Y[:, None] * forces
    n = 2 * mesh.n_vnodes
    if np.iscomplexobj(vals):
        return (np.bincount(edofs.ravel(), vals.real.ravel(), n)
                + 1j * np.bincount(edofs.ravel(), vals.imag.ravel(), n))
    return np.bincount(edofs.ravel(), vals.ravel(), n)


def _rect(rows, cols, vals, shape):
    r = np.broadcast_to(rows[:, :, None], vals.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], vals.shape).ravel()
    M = sp.coo_matrix((vals.ravel(), (r, c)), shape=shape).tocsr()
    M.sum_duplicates()
    return M


def force_jacobian(mesh, blocks, weights, recovery_op=None):
    """Sparse d(sum_e w_e f_e)/d[v1 | v2 | p] of shape (n_solid, n_fluid).

    ``weights`` are per interface element (the filter values Y for the load
    Jacobian, or ones for the raw force operator).
    """
    dm = dofmap_for(mesh)
    e = blocks.elements
    rows = dm.solid_element_dofs(mesh)[e]
    w = np.asarray(weights)[:, None, None]
    Jp = _rect(rows, mesh.pconn[e] + 2 * mesh.n_vnodes, w * blocks.gp, (dm.n_solid, dm.n_fluid))
    if blocks.gv is None:
        return Jp
    conn = mesh.conn[e]
    if not blocks.recovered:
        cols = np.hstack([conn, conn + mesh.n_vnodes])
        return Jp + _rect(rows, cols, w * blocks.gv, (dm.n_solid, dm.n_fluid))
    if recovery_op is None:
        raise CouplingError("recovered total-stress Jacobian needs the recovery operator")
    nv = mesh.n_vnodes
    cols = np.hstack([conn, conn + nv, conn + 2 * nv, conn + 3 * nv])
    Jw = _rect(rows, cols, w * blocks.gv, (dm.n_solid, 4 * nv))
    Z = sp.csr_matrix((nv, nv))
    R = sp.bmat([[recovery_op.dx, Z], [recovery_op.dy, Z], [Z, recovery_op.dx], [Z, recovery_op.dy]], format="csr")
    Jv = Jw @ R  # (n_solid, 2 nv)
    Jv = sp.hstack([Jv, sp.csr_matrix((dm.n_solid, mesh.n_pnodes))], format="csr")
    return (Jp + Jv).tocsr()


def nodal_force_field(mesh, load):
    """Split a solid-ordered load vector into per-node (Fx, Fy)."""
    nv = mesh.n_vnodes
    return load[:nv], load[nv:]


__all__ = [
    "StressMode", "IntegralForm", "CouplingConfig", "CouplingError", "coupling_filter", "InterfaceSet",
    "build_interface", "ForceBlocks", "force_blocks", "element_forces", "surface_forces", "volume_forces",
    "assemble_coupled_load", "force_jacobian", "element_upsilon", "nodal_force_field",
]
