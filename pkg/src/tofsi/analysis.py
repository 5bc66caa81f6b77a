"""One-way coupled fluid -> solid analysis on the unified domain.

A :class:`CoupledModel` owns the solvers and the state-independent tables
(force blocks, recovery operator).  :meth:`CoupledModel.analyze` takes a
physical element density field and returns every intermediate quantity the
adjoint needs.  All steps run unchanged with complex densities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from tofsi.coupling import (CouplingConfig, StressMode, assemble_coupled_load, build_interface,
                            coupling_filter, element_forces, force_blocks, force_jacobian)
from tofsi.fluid import FluidBC, FluidParams, FluidSolver, FluidState, checked_solve
from tofsi.mesh import DESIGN, FLUID, NONDESIGN
from tofsi.recovery import build_patches, build_recovery_operator
from tofsi.solid import SolidParams, SolidSolver, compliance

log = logging.getLogger(__name__)


def fixed_support_nodes(mesh):
    """Velocity-grid nodes on the bottom boundary that belong to solid elements."""
    nodes = np.unique(mesh.conn[mesh.solid_elements].ravel())
    y = mesh.vcoords[nodes, 1]
    return nodes[np.isclose(y, mesh.vcoords[:, 1].min())]


@dataclass
class Analysis:
    rho: np.ndarray  # physical element densities
    fluid: FluidState
    recovered: object  # RecoveredDerivatives or None
    forces: np.ndarray  # unfiltered element forces on the interface elements
    load: np.ndarray
    u: np.ndarray
    compliance: complex | float

    @property
    def u1(self):
        return self.u[: self.u.size // 2]

    @property
    def u2(self):
        return self.u[self.u.size // 2:]


class CoupledModel:
    def __init__(self, mesh, fluid_params=None, solid_params=None, coupling=None, bc=None,
                 fixed_nodes=None, newton_tol=1e-10, newton_max_iter=25):
        self.mesh = mesh
        self.fluid_params = fluid_params or FluidParams()
        self.solid_params = solid_params or SolidParams()
        self.coupling = coupling or CouplingConfig()
        self.fluid = FluidSolver(mesh, self.fluid_params, bc or FluidBC(), tol=newton_tol, max_iter=newton_max_iter)
        if fixed_nodes is None:
            fixed_nodes = fixed_support_nodes(mesh)
        self.solid = SolidSolver(mesh, self.solid_params, fixed_nodes)
        self.iface = build_interface(mesh)
        self.blocks = force_blocks(mesh, self.iface, self.fluid_params.mu, self.coupling)
        self.recovery_op = None
        if self.blocks.gv is not None and self.blocks.recovered:
            self.recovery_op = build_recovery_operator(mesh, build_patches(mesh))
        self.design = mesh.elements_in(DESIGN)
        self._last_real = None

    # -- parameter updates used by continuation --------------------------------
    def set_penalties(self, p_e=None, p_upsilon=None):
        if p_e is not None and p_e != self.solid_params.p_e:
            self.solid_params = replace(self.solid_params, p_e=p_e)
            self.solid.params = self.solid_params
        if p_upsilon is not None and p_upsilon != self.coupling.p_upsilon:
            self.coupling = replace(self.coupling, p_upsilon=p_upsilon)

    def physical_density(self, rho_design):
        """Element field: 0 in fluid-only, 1 in non-design, ``rho_design`` in the design box."""
        rho_design = np.asarray(rho_design)
        rho = np.zeros(self.mesh.n_elements, dtype=np.result_type(rho_design, float))
        rho[self.mesh.region == NONDESIGN] = 1.0
        rho[self.design] = rho_design
        return rho

    def analyze(self, rho, x0=None):
        rho = np.asarray(rho)
        if rho.shape != (self.mesh.n_elements,):
            raise ValueError(f"expected {self.mesh.n_elements} element densities, got {rho.shape}")
        if x0 is None and self._last_real is not None:
            x0 = self._last_real
        fl = self.fluid.solve(rho, x0=x0)
        if not np.iscomplexobj(fl.v1):
            self._last_real = fl.vector
        rec = self.recovery_op.apply(fl.v1, fl.v2) if self.recovery_op is not None else None
        forces = element_forces(self.mesh, self.blocks, fl, rec)
        load = assemble_coupled_load(self.mesh, self.blocks, forces, rho, self.coupling)
        st = self.solid.solve(rho, load)
        c = compliance(st.u, self.solid.K)
        return Analysis(rho, fl, rec, forces, load, st.u, c)

    def reset_warm_start(self):
        self._last_real = None

    # -- adjoint -----------------------------------------------------------------
    def coupling_jacobian(self, rho):
        """d(Y F)/d[v1 | v2 | p] at the current filter values."""
        Y, _ = coupling_filter(np.asarray(rho)[self.blocks.elements], self.coupling)
        return force_jacobian(self.mesh, self.blocks, Y, self.recovery_op)

    def compliance_gradient(self, an, elements=None, include_coupling_chain=True):
        """df/drho_e for the listed elements via the adjoint method.

        The solid adjoint for f = u^T K u is 2u; the fluid adjoint solves
        J_f^T lam_f = (d(Y F)/dx_f)^T lam_u with the converged Newton Jacobian.
        """
        mesh = self.mesh
        elements = self.design if elements is None else np.asarray(elements)
        rho = an.rho
        u = an.u
        lam_u = 2.0 * u
        edofs_s = self.solid.edofs[elements]
        ue = u[edofs_s]
        _, dE = self.solid.element_moduli(rho[elements])
        term_k = -dE * np.einsum("ea,eab,eb->e", ue, self.solid.k0[elements], ue)

        # explicit filter term 2 dY u_e^T F_e, only on interface elements
        pos = np.full(mesh.n_elements, -1)
        pos[self.blocks.elements] = np.arange(self.blocks.elements.size)
        term_y = np.zeros(elements.size, dtype=term_k.dtype)
        on = pos[elements] >= 0
        if np.any(on):
            _, dY = coupling_filter(rho[elements[on]], self.coupling)
            fe = an.forces[pos[elements[on]]]
            term_y[on] = 2.0 * dY * np.einsum("ea,ea->e", ue[on], fe)

        term_f = np.zeros(elements.size, dtype=term_k.dtype)
        if include_coupling_chain:
            G = self.coupling_jacobian(rho)
            rhs = G.T @ lam_u
            lam_f = checked_solve(self.fluid.lu, self.fluid.jacobian, np.asarray(rhs), trans="T")
            lam_f[self.fluid.dirichlet.indices] = 0.0
            cols = self.fluid.drho_residual(an.fluid, rho, elements)
            term_f = -np.einsum("ea,ea->e", lam_f[self.fluid.edofs[elements]], cols)
        return term_k + term_y + term_f

    def complex_step(self, rho, element, h=1e-10):
        """Im f(rho + i h e_k) / h from a full complex analysis."""
        rc = np.asarray(rho, dtype=complex).copy()
        rc[element] += 1j * h
        x0 = self._last_real
        an = self.analyze(rc, x0=None if x0 is None else x0.astype(complex))
        return float(np.imag(an.compliance) / h)


def region_summary(mesh):
    return {name: int(np.sum(mesh.region == code))
            for name, code in (("fluid", FLUID), ("design", DESIGN), ("nondesign", NONDESIGN))}


__all__ = ["CoupledModel", "Analysis", "fixed_support_nodes", "region_summary", "StressMode"]
