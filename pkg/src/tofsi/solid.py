"""Plane-strain Q2 elasticity with modified-SIMP stiffness, and compliance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tofsi.fem_core import SHAPES3, element_geometry
from tofsi.fluid import SparsePattern, SingularSystemError, _check_density, checked_solve, factorize
from tofsi.mesh import dofmap_for


@dataclass(frozen=True)
class SolidParams:
    e_max: float = 1e5
    e_min: float = 1e-5
    p_e: float = 1.0
    nu: float = 0.3

    def __post_init__(self):
        if not self.e_max > self.e_min > 0:
            raise ValueError("need e_max > e_min > 0")
        if not self.p_e >= 1:
            raise ValueError(f"p_e must be >= 1, got {self.p_e}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must be in [0, 0.5), got {self.nu}")


def youngs_modulus(rho, params):
    """Return ``(E, dE/drho)`` for E = E_min + (E_max - E_min) rho^p."""
    _check_density(rho)
    rho = np.asarray(rho)
    span = params.e_max - params.e_min
    E = params.e_min + span * rho ** params.p_e
    dE = span * params.p_e * rho ** (params.p_e - 1.0)
    return E, dE


def plane_strain_matrix(E, nu):
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return c * np.array([[1.0 - nu, nu, 0.0], [nu, 1.0 - nu, 0.0], [0.0, 0.0, 0.5 - nu]])


def unit_element_stiffness(coords, nu):
    """Element stiffness matrices for E = 1, shape (ne, 18, 18)."""
    geo = element_geometry(np.asarray(coords, dtype=float), SHAPES3)
    ne, nq = geo.wdet.shape
    B = np.zeros((ne, nq, 3, 18))
    B[:, :, 0, :9] = geo.dpsi_dx
    B[:, :, 1, 9:] = geo.dpsi_dy
    B[:, :, 2, :9] = geo.dpsi_dy
    B[:, :, 2, 9:] = geo.dpsi_dx
    D = plane_strain_matrix(1.0, nu)
    return np.einsum("eq,eqia,ij,eqjb->eab", geo.wdet, B, D, B)


@dataclass
class SolidState:
    u: np.ndarray  # [u1 | u2]

    @property
    def u1(self):
        return self.u[: self.u.size // 2]

    @property
    def u2(self):
        return self.u[self.u.size // 2:]


class SolidSolver:
    def __init__(self, mesh, params, fixed_nodes):
        self.mesh = mesh
        self.params = params
        self.dofmap = dofmap_for(mesh)
        self.edofs = self.dofmap.solid_element_dofs(mesh)
        self.k0 = unit_element_stiffness(mesh.element_coords(), params.nu)
        self.pattern = SparsePattern(self.edofs, self.dofmap.n_solid)
        fixed_nodes = np.asarray(fixed_nodes, dtype=np.int64)
        if fixed_nodes.size == 0:
            raise ValueError("no fixed displacement nodes")
        self.fixed = np.concatenate([self.dofmap.index("u1", fixed_nodes), self.dofmap.index("u2", fixed_nodes)])
        free = np.ones(self.dofmap.n_solid, dtype=bool)
        free[self.fixed] = False
        self.free = np.flatnonzero(free)
        self.lu = None
        self.K = None

    @property
    def n(self):
        return self.dofmap.n_solid

    def element_moduli(self, rho_elem):
        return youngs_modulus(rho_elem, self.params)

    def stiffness(self, rho_elem):
        """Global stiffness before boundary conditions."""
        E, _ = self.element_moduli(rho_elem)
        K = self.pattern.matrix(np.asarray(E)[:, None, None] * self.k0)
        if not np.all(np.isfinite(K.data)):
            raise ValueError("non-finite entries in the stiffness matrix")
        return K

    def solve(self, rho_elem, load):
        """Solve ``K u = F`` with u = 0 on the fixed nodes."""
        K = self.stiffness(rho_elem)
        Kff = K[self.free][:, self.free]
        self.K = K
        self.Kff = Kff
        self.lu = factorize(Kff)
        u = np.zeros(self.n, dtype=np.result_type(Kff.dtype, np.asarray(load).dtype))
        u[self.free] = checked_solve(self.lu, Kff, np.asarray(load)[self.free])
        return SolidState(u)

    def solve_adjoint(self, rhs):
        """Solve ``K^T lam = rhs`` on free dofs with the last factorisation."""
        if self.lu is None:
            raise SingularSystemError("solid system not factorised yet")
        lam = np.zeros(self.n, dtype=np.result_type(self.Kff.dtype, np.asarray(rhs).dtype))
        lam[self.free] = checked_solve(self.lu, self.Kff, np.asarray(rhs)[self.free], trans="T")
        return lam

    def element_energies(self, u, rho_elem):
        """``E_e u_e^T k0_e u_e`` per element (no complex conjugation)."""
        E, _ = self.element_moduli(rho_elem)
        ue = u[self.edofs]
        return E * np.einsum("ea,eab,eb->e", ue, self.k0, ue)


def compliance(u, K):
    """``u^T K u`` without conjugation, so complex steps propagate."""
    return u @ (K @ u)
