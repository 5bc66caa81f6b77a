"""Brinkman-penalised steady Navier-Stokes on Q2Q1 elements, solved by Newton.

Element unknowns are ordered ``[v1 (9) | v2 (9) | p (4)]``.  All kernels are
vectorised over elements and accept real or complex state/design arrays, so
the same code runs the complex-step checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from tofsi.fem_core import SHAPES3, element_geometry
from tofsi.mesh import INLET, WALL, DirichletSet, dofmap_for

log = logging.getLogger(__name__)

_RHO_TOL = 1e-12


class SingularSystemError(RuntimeError):
    pass


class NewtonDivergence(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"Newton did not converge in {iterations} iterations "
                         f"(last residual {residual:.3e})")


@dataclass(frozen=True)
class FluidParams:
    mu: float = 1.0
    rho_f: float = 1.0
    alpha_max: float = 1e9
    alpha_min: float = 0.0
    p_alpha: float = 2.5e-6

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.rho_f >= 0:
            raise ValueError(f"rho_f must be non-negative, got {self.rho_f}")
        if not self.alpha_max >= self.alpha_min >= 0:
            raise ValueError("need alpha_max >= alpha_min >= 0")
        if not self.p_alpha > 0:
            raise ValueError(f"p_alpha must be positive, got {self.p_alpha}")


def _check_density(rho):
    r = np.real(np.asarray(rho))
    if np.any(r < -_RHO_TOL) or np.any(r > 1 + _RHO_TOL):
        raise ValueError("density outside [0, 1]")


def inverse_permeability(rho, params):
    """alpha(rho) = a_max + (1-rho)(a_min-a_max)(1+p)/((1-rho)+p)."""
    _check_density(rho)
    q = params.p_alpha
    s = 1.0 - np.asarray(rho)
    return params.alpha_max + s * (params.alpha_min - params.alpha_max) * (1.0 + q) / (s + q)


def d_inverse_permeability(rho, params):
    _check_density(rho)
    q = params.p_alpha
    s = 1.0 - np.asarray(rho)
    # d/ds [s/(s+q)] = q/(s+q)^2, ds/drho = -1
    return -(params.alpha_min - params.alpha_max) * (1.0 + q) * q / (s + q) ** 2


@dataclass
class FluidState:
    v1: np.ndarray
    v2: np.ndarray
    p: np.ndarray
    iterations: int = 0
    residuals: list = field(default_factory=list)

    @property
    def vector(self):
        return np.concatenate([self.v1, self.v2, self.p])

    @classmethod
    def from_vector(cls, x, nv, **kw):
        return cls(x[:nv].copy(), x[nv:2 * nv].copy(), x[2 * nv:].copy(), **kw)


@dataclass(frozen=True)
class FluidBC:
    """Parabolic inlet, no-slip walls, zero pressure on the outlet."""

    v_max: float = 1.0

    def dirichlet(self, mesh):
        dm = dofmap_for(mesh)
        d = DirichletSet()
        tag = mesh.node_tag
        y = mesh.vcoords[:, 1]
        wall = np.flatnonzero(tag == WALL)
        d.add(dm.index("v1", wall), 0.0).add(dm.index("v2", wall), 0.0)
        inlet = np.flatnonzero(tag == INLET)
        prof = self.v_max * 4.0 * y[inlet] * (mesh.ly - y[inlet]) / mesh.ly ** 2
        d.add(dm.index("v1", inlet), prof).add(dm.index("v2", inlet), 0.0)
        # outlet corner nodes carry the WALL tag, so select by coordinate
        xmax = mesh.pcoords[:, 0].max()
        outlet_p = np.flatnonzero(np.isclose(mesh.pcoords[:, 0], xmax))
        d.add(dm.index("p", outlet_p), 0.0)
        return d


@dataclass
class ElementBlocks:
    """State-independent element tables at the 3x3 rule."""

    nx: np.ndarray  # (ne, q, 9)
    ny: np.ndarray
    wd: np.ndarray  # (ne, q)
    k_lin: np.ndarray  # (ne, 22, 22) viscous + pressure coupling
    mass: np.ndarray  # (ne, 9, 9)


def element_blocks(coords, mu):
    geo = element_geometry(coords, SHAPES3)
    psi, phi = SHAPES3.psi, SHAPES3.phi
    Nx, Ny, wd = geo.dpsi_dx, geo.dpsi_dy, geo.wdet
    ne = coords.shape[0]
    kxx = np.einsum("eq,eqa,eqb->eab", wd, Nx, Nx)
    kyy = np.einsum("eq,eqa,eqb->eab", wd, Ny, Ny)
    kxy = np.einsum("eq,eqa,eqb->eab", wd, Nx, Ny)
    q1 = np.einsum("eq,eqa,qb->eab", wd, Nx, phi)
    q2 = np.einsum("eq,eqa,qb->eab", wd, Ny, phi)
    K = np.zeros((ne, 22, 22))
    K[:, :9, :9] = mu * (2 * kxx + kyy)
    K[:, :9, 9:18] = mu * kxy
    K[:, 9:18, :9] = mu * kxy.transpose(0, 2, 1)
    K[:, 9:18, 9:18] = mu * (kxx + 2 * kyy)
    K[:, :9, 18:] = -q1
    K[:, 9:18, 18:] = -q2
    K[:, 18:, :9] = -q1.transpose(0, 2, 1)
    K[:, 18:, 9:18] = -q2.transpose(0, 2, 1)
    M = np.einsum("eq,qa,qb->eab", wd, psi, psi)
    return ElementBlocks(Nx, Ny, wd, K, M)


def element_residual_jacobian(blocks, xe, alpha, rho_f, need_jac=True):
    """Residual (ne, 22) and Jacobian (ne, 22, 22) for local states ``xe``."""
    psi = SHAPES3.psi
    Nx, Ny, wd = blocks.nx, blocks.ny, blocks.wd
    v1, v2 = xe[:, :9], xe[:, 9:18]
    alpha = np.asarray(alpha)
    R = np.einsum("eab,eb->ea", blocks.k_lin, xe)
    Mv1 = np.einsum("eab,eb->ea", blocks.mass, v1)
    Mv2 = np.einsum("eab,eb->ea", blocks.mass, v2)
    R[:, :9] += alpha[:, None] * Mv1
    R[:, 9:18] += alpha[:, None] * Mv2
    J = None
    if need_jac:
        J = blocks.k_lin.astype(np.result_type(xe, alpha, blocks.k_lin), copy=True)
        am = alpha[:, None, None] * blocks.mass
        J[:, :9, :9] += am
        J[:, 9:18, 9:18] += am
    if rho_f != 0:
        u = v1 @ psi.T  # (ne, q)
        v = v2 @ psi.T
        ux = np.einsum("eqa,ea->eq", Nx, v1)
        uy = np.einsum("eqa,ea->eq", Ny, v1)
        vx = np.einsum("eqa,ea->eq", Nx, v2)
        vy = np.einsum("eqa,ea->eq", Ny, v2)
        w = rho_f * wd
        R[:, :9] += np.einsum("eq,qa->ea", w * (u * ux + v * uy), psi)
        R[:, 9:18] += np.einsum("eq,qa->ea", w * (u * vx + v * vy), psi)
        if need_jac:
            adv = u[:, :, None] * Nx + v[:, :, None] * Ny  # (ne, q, 9)
            cadv = np.einsum("eq,qa,eqb->eab", w, psi, adv)
            J[:, :9, :9] += cadv + np.einsum("eq,qa,qb->eab", w * ux, psi, psi)
            J[:, :9, 9:18] += np.einsum("eq,qa,qb->eab", w * uy, psi, psi)
            J[:, 9:18, :9] += np.einsum("eq,qa,qb->eab", w * vx, psi, psi)
            J[:, 9:18, 9:18] += cadv + np.einsum("eq,qa,qb->eab", w * vy, psi, psi)
    return R, J


def assemble_element_fluid(coords, state_e, alpha_e, params):
    """Residual and 22x22 Jacobian of a single element."""
    blocks = element_blocks(np.asarray(coords, dtype=float)[None], params.mu)
    xe = np.asarray(state_e)[None]
    R, J = element_residual_jacobian(blocks, xe, np.array([alpha_e]), params.rho_f)
    return R[0], J[0]


class SparsePattern:
    """Fixed CSR pattern for scatter-adding dense element blocks."""

    def __init__(self, edofs, n):
        self.n = n
        nl = edofs.shape[1]
        rows = np.repeat(edofs, nl, axis=1).ravel()
        cols = np.tile(edofs, (1, nl)).ravel()
        key = rows.astype(np.int64) * n + cols
        uniq, self.pos = np.unique(key, return_inverse=True)
        self.rows = (uniq // n).astype(np.int64)
        self.cols = (uniq % n).astype(np.int64)
        self.nnz = uniq.size
        # keys are sorted by (row, col), which is canonical CSR order
        self.indptr = np.searchsorted(self.rows, np.arange(n + 1)).astype(np.int64)
        self.indices = self.cols
        self.diag_pos = None

    def matrix(self, blocks):
        vals = np.asarray(blocks).ravel()
        if np.iscomplexobj(vals):
            data = (np.bincount(self.pos, vals.real, self.nnz)
                    + 1j * np.bincount(self.pos, vals.imag, self.nnz))
        else:
            data = np.bincount(self.pos, vals, self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))

    def apply_dirichlet(self, A, idx):
        """Replace rows ``idx`` by identity rows in place."""
        if self.diag_pos is None:
            self._row_of = np.repeat(np.arange(self.n), np.diff(self.indptr))
            self.diag_pos = np.full(self.n, -1, dtype=np.int64)
            on_diag = self._row_of == self.indices
            self.diag_pos[self._row_of[on_diag]] = np.flatnonzero(on_diag)
        mask = np.zeros(self.n, dtype=bool)
        mask[idx] = True
        A.data[mask[self._row_of]] = 0.0
        if np.any(self.diag_pos[idx] < 0):
            raise ValueError("constrained dof lacks a diagonal entry in the pattern")
        A.data[self.diag_pos[idx]] = 1.0
        return A


def scatter_vector(edofs, vals, n):
    vals = np.asarray(vals)
    if np.iscomplexobj(vals):
        return (np.bincount(edofs.ravel(), vals.real.ravel(), n)
                + 1j * np.bincount(edofs.ravel(), vals.imag.ravel(), n))
    return np.bincount(edofs.ravel(), vals.ravel(), n)


def factorize(A):
    """Sparse LU with singularity reported as :class:`SingularSystemError`."""
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc


def checked_solve(lu, A, b, trans="N", refine=3):
    """LU solve with a few steps of iterative refinement and a residual check."""
    op = A.T if trans == "T" else A
    x = lu.solve(b, trans=trans)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution from the factorisation")
    nb = np.linalg.norm(b)
    r = b - op @ x
    for _ in range(refine):
        if np.linalg.norm(r) <= 1e-14 * nb:
            break
        x = x + lu.solve(r, trans=trans)
        r = b - op @ x
    if nb > 0 and np.linalg.norm(r) > 1e-6 * nb:
        raise SingularSystemError(
            f"linear solve residual {np.linalg.norm(r) / nb:.2e}; the system is numerically singular")
    return x


def apply_dirichlet(A, pattern, dirichlet):
    """Identity rows for constrained dofs (increment fixed to zero)."""
    return pattern.apply_dirichlet(A, dirichlet.indices)


class FluidSolver:
    """Holds mesh tables and the sparse pattern; one instance per thread."""

    def __init__(self, mesh, params, bc=None, tol=1e-10, max_iter=25, polish=True):
        self.mesh = mesh
        self.polish = polish
        self.params = params
        self.bc = bc if bc is not None else FluidBC()
        self.tol = tol
        self.max_iter = max_iter
        self.dofmap = dofmap_for(mesh)
        self.edofs = self.dofmap.fluid_element_dofs(mesh)
        self.blocks = element_blocks(mesh.element_coords(), params.mu)
        self.pattern = SparsePattern(self.edofs, self.dofmap.n_fluid)
        self.dirichlet = self.bc.dirichlet(mesh)
        self.lu = None
        self.jacobian = None

    @property
    def n(self):
        return self.dofmap.n_fluid

    def element_alpha(self, rho_elem):
        return inverse_permeability(rho_elem, self.params)

    def residual_jacobian(self, x, alpha, need_jac=True):
        xe = x[self.edofs]
        Re, Je = element_residual_jacobian(self.blocks, xe, alpha, self.params.rho_f, need_jac)
        R = scatter_vector(self.edofs, Re, self.n)
        J = self.pattern.matrix(Je) if need_jac else None
        return R, J

    def initial_guess(self, dtype=float):
        x = np.zeros(self.n, dtype=dtype)
        x[self.dirichlet.indices] = self.dirichlet.values
        return x

    def solve(self, rho_elem, x0=None):
        """Undamped Newton; ``rho_elem`` is the physical density of every element."""
        alpha = self.element_alpha(rho_elem)
        dtype = np.result_type(alpha, float if x0 is None else x0)
        x = self.initial_guess(dtype) if x0 is None else np.array(x0, dtype=dtype)
        x[self.dirichlet.indices] = self.dirichlet.values
        idx = self.dirichlet.indices
        complex_mode = np.iscomplexobj(x)
        history = []
        r0 = None
        dx = None
        for it in range(self.max_iter + 1):
            R, J = self.residual_jacobian(x, alpha)
            R[idx] = 0.0
            nr = float(np.linalg.norm(R))
            history.append(nr)
            if r0 is None:
                r0 = max(1.0, nr)
            done = nr <= self.tol * r0
            if complex_mode:
                # the imaginary part carries the derivative and is tiny; converge it on its own scale
                done = (float(np.linalg.norm(R.real)) <= self.tol * r0 and dx is not None
                        and np.linalg.norm(dx.imag) <= 1e-12 * np.linalg.norm(x.imag))
            if done:
                apply_dirichlet(J, self.pattern, self.dirichlet)
                self.jacobian = J
                self.lu = factorize(J)
                if self.polish:
                    # one extra correction with the factorisation kept for the adjoint
                    x = x + self.lu.solve(-R)
                state = FluidState.from_vector(x, self.mesh.n_vnodes, iterations=it, residuals=history)
                log.debug("Newton converged in %d iterations (|R|=%.3e)", it, nr)
                return state
            if it == self.max_iter:
                break
            apply_dirichlet(J, self.pattern, self.dirichlet)
            lu = factorize(J)
            dx = checked_solve(lu, J, -R)
            x = x + dx
        raise NewtonDivergence(self.max_iter, history[-1])

    def continuity_residual(self, state, rho_elem):
        alpha = self.element_alpha(rho_elem)
        R, _ = self.residual_jacobian(state.vector, alpha, need_jac=False)
        R[self.dirichlet.indices] = 0.0
        return R[2 * self.mesh.n_vnodes:]

    def drho_residual(self, state, rho_elem, elements=None):
        """Columns dR/drho_e for the listed elements (Brinkman term only); dense (n, k)."""
        elements = np.arange(self.mesh.n_elements) if elements is None else np.asarray(elements)
        dalpha = d_inverse_permeability(np.asarray(rho_elem)[elements], self.params)
        x = state.vector
        xe = x[self.edofs[elements]]
        m = self.blocks.mass[elements]
        cols = np.zeros((elements.size, 22), dtype=np.result_type(dalpha, x))
        cols[:, :9] = dalpha[:, None] * np.einsum("eab,eb->ea", m, xe[:, :9])
        cols[:, 9:18] = dalpha[:, None] * np.einsum("eab,eb->ea", m, xe[:, 9:18])
        return cols  # local rows; dofs in self.edofs[elements]
