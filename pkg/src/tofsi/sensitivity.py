"""Adjoint sensitivities of the compliance objective and their complex-step check.

The coupled residual is block lower-triangular: the fluid does not see the
displacements, and the solid sees the fluid only through the filtered forces.
The adjoint is therefore solved solid first (lam_u = 2u for f = u^T K u), then
fluid with the transposed Newton Jacobian.  The bookkeeping lives in
:class:`tofsi.analysis.CoupledModel`; this module exposes the building blocks
and the verification harness.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from tofsi.coupling import StressMode, force_jacobian


def dF_dp(model):
    """Unfiltered dF/dp as an (n_solid, n_p) sparse matrix."""
    blk = model.blocks
    ones = np.ones(blk.elements.size)
    J = force_jacobian(model.mesh, _pressure_only(blk), ones)
    return J[:, 2 * model.mesh.n_vnodes:]


def dF_dv(model):
    """Unfiltered dF/d[v1 | v2] as an (n_solid, 2 n_v) sparse matrix."""
    blk = model.blocks
    nv = model.mesh.n_vnodes
    if blk.gv is None:
        return sp.csr_matrix((2 * nv, 2 * nv))
    ones = np.ones(blk.elements.size)
    J = force_jacobian(model.mesh, blk, ones, model.recovery_op)
    Jp = force_jacobian(model.mesh, _pressure_only(blk), ones)
    return (J - Jp)[:, :2 * nv]


def _pressure_only(blk):
    from dataclasses import replace

    return replace(blk, gv=None)


def dR_drho(model, an, elements):
    """Dense columns of the coupled residual derivative for ``elements``.

    Returns ``(fluid_cols, solid_cols)``: fluid rows are the Brinkman term
    (zero on constrained dofs), solid rows are dK_e u_e - dY_e F_e.
    """
    elements = np.asarray(elements)
    fl = model.fluid
    n_f, n_s = fl.n, model.solid.n
    local = fl.drho_residual(an.fluid, an.rho, elements)
    fcols = np.zeros((n_f, elements.size), dtype=local.dtype)
    for j in range(elements.size):
        np.add.at(fcols[:, j], fl.edofs[elements[j]], local[j])
    fcols[fl.dirichlet.indices] = 0.0

    from tofsi.coupling import coupling_filter

    _, dE = model.solid.element_moduli(an.rho[elements])
    scols = np.zeros((n_s, elements.size), dtype=np.result_type(an.u, dE))
    pos = {int(e): i for i, e in enumerate(model.blocks.elements)}
    for j, e in enumerate(elements):
        d = model.solid.edofs[e]
        col = dE[j] * (model.solid.k0[e] @ an.u[d])
        if int(e) in pos:
            _, dY = coupling_filter(an.rho[e], model.coupling)
            col = col - dY * an.forces[pos[int(e)]]
        scols[d, j] += col
    scols[model.solid.fixed] = 0.0
    return fcols, scols


def monolithic_gradient(model, an, elements):
    """Same gradient from one transposed block system; used as a cross-check."""
    fl, so = model.fluid, model.solid
    n_f = fl.n
    free = so.free
    G = model.coupling_jacobian(an.rho)[free]  # rows: free solid dofs
    Jf = fl.jacobian
    top = sp.hstack([Jf, sp.csr_matrix((n_f, free.size))])
    bot = sp.hstack([-G, so.Kff])
    A = sp.vstack([top, bot]).tocsc()
    dfdr = np.concatenate([np.zeros(n_f), 2.0 * (so.Kff @ an.u[free])])
    lam = spla.spsolve(A.T.tocsc(), dfdr)
    fcols, scols = dR_drho(model, an, elements)
    elements = np.asarray(elements)
    _, dE = so.element_moduli(an.rho[elements])
    ue = an.u[so.edofs[elements]]
    explicit = dE * np.einsum("ea,eab,eb->e", ue, so.k0[elements], ue)
    return explicit - lam[:n_f] @ fcols - lam[n_f:] @ scols[free]


def adjoint_sensitivities(model, an, elements=None, include_coupling_chain=True):
    return model.compliance_gradient(an, elements, include_coupling_chain)


def complex_step_sensitivity(model, rho, element, h=1e-10):
    return model.complex_step(rho, element, h)


def normalized_error(cs, adj):
    """(complex - analytical) / analytical in percent."""
    return (cs - adj) / adj * 100.0


@dataclass
class VerificationRow:
    element: int
    step: float
    imag_part: float
    analytical: float
    complex_step: float
    error_pct: float


@dataclass
class VerificationReport:
    mode: str
    rows: list
    threshold_pct: float

    @property
    def passed(self):
        return all(abs(r.error_pct) <= self.threshold_pct for r in self.rows)

    @property
    def max_abs_error(self):
        return max(abs(r.error_pct) for r in self.rows)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["mode", "element", "step", "imag_part", "analytical", "complex_step", "normalized_error_pct"])
        for r in self.rows:
            w.writerow([self.mode, r.element, f"{r.step:.1e}", f"{r.imag_part:.10e}", f"{r.analytical:.10e}",
                        f"{r.complex_step:.10e}", f"{r.error_pct:.3e}"])
        return buf.getvalue()

    def to_text(self):
        head = f"{'element':>8} {'step':>9} {'Im f':>18} {'analytical':>18} {'error %':>11}"
        lines = [f"coupling: {self.mode}", head]
        for r in self.rows:
            lines.append(f"{r.element:>8d} {r.step:>9.1e} {r.imag_part:>18.10e} {r.analytical:>18.10e} "
                         f"{r.error_pct:>11.3e}")
        lines.append(f"max |error| = {self.max_abs_error:.3e} %  (threshold {self.threshold_pct:g} %)  "
                     f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def pick_elements(model, n, seed):
    if n < 1:
        raise ValueError("need at least one element to verify")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(model.design, size=min(n, model.design.size), replace=False))


def verify(model, rho, elements, step=1e-10, threshold_pct=1e-6, seed=0):
    """Adjoint vs. complex-step comparison per element; the sign of each step is drawn from ``seed``."""
    an = model.analyze(rho)
    adj = model.compliance_gradient(an, elements)
    rng = np.random.default_rng(seed + 1)
    rows = []
    for e, a in zip(elements, adj):
        h = step * (1 if rng.random() < 0.5 else -1)
        cs = model.complex_step(rho, int(e), h)
        rows.append(VerificationRow(int(e), h, cs * h, float(a), cs, normalized_error(cs, float(a))))
    mode = model.coupling.stress_mode
    return VerificationReport(mode.value if isinstance(mode, StressMode) else str(mode), rows, threshold_pct)


def volume_gradient(mesh, elements):
    """d(V/V_0)/drho_e = V_e / V_0 over the listed elements."""
    areas = mesh.element_areas()[elements]
    return areas / areas.sum()


__all__ = ["dF_dp", "dF_dv", "dR_drho", "monolithic_gradient", "adjoint_sensitivities",
           "complex_step_sensitivity", "normalized_error", "verify", "pick_elements", "VerificationReport",
           "volume_gradient"]
