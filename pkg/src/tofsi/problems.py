"""Problem definitions: column in a channel, the zero-design verification case,
and analytic Poiseuille/Couette cases."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from tofsi.analysis import CoupledModel
from tofsi.coupling import CouplingConfig, StressMode
from tofsi.fluid import FluidBC, FluidParams, FluidSolver
from tofsi.mesh import build_channel_mesh, snap_box, tag_regions

log = logging.getLogger(__name__)


def reynolds(v_max, rho_f, l_c, mu):
    if not mu > 0:
        raise ValueError(f"mu must be positive, got {mu}")
    return v_max * rho_f * l_c / mu


@dataclass(frozen=True)
class ProblemSpec:
    nx: int = 76
    ny: int = 38
    lx: float = 2.0
    ly: float = 1.0
    design_box: tuple = (0.3, 0.0, 1.7, 0.8)
    column_box: tuple = (0.975, 0.0, 1.025, 0.5)
    v_max: float = 1.0
    fluid: FluidParams = field(default_factory=FluidParams)
    e_max: float = 1e5
    e_min: float = 1e-5
    nu: float = 0.3
    volume_fraction: float = 0.1
    l_c: float = 1.0
    point_a: tuple = (0.975, 0.5)

    @property
    def reynolds(self):
        return reynolds(self.v_max, self.fluid.rho_f, self.l_c, self.fluid.mu)

    def build_mesh(self):
        mesh = build_channel_mesh(self.nx, self.ny, self.lx, self.ly)
        design = snap_box(mesh, self.design_box)
        column = snap_box(mesh, self.column_box)
        return tag_regions(mesh, design, [column])

    def model(self, coupling=None, p_e=1.0, mesh=None, **kw):
        from tofsi.solid import SolidParams

        mesh = mesh if mesh is not None else self.build_mesh()
        solid = SolidParams(e_max=self.e_max, e_min=self.e_min, p_e=p_e, nu=self.nu)
        return CoupledModel(mesh, self.fluid, solid, coupling or CouplingConfig(), FluidBC(self.v_max), **kw)


def column_in_channel(nx=76, ny=38, mu=1.0, v_max=1.0, p_alpha=2.5e-6, **kw):
    fluid = FluidParams(mu=mu, p_alpha=p_alpha)
    return ProblemSpec(nx=nx, ny=ny, v_max=v_max, fluid=fluid, **kw)


@dataclass
class CaseReport:
    v1_max: float
    v1_min: float
    v2_max: float
    v2_min: float
    p_max: float
    p_min: float
    compliance: float
    u1_a: float
    u2_a: float
    newton_iterations: int

    def rows(self):
        return [("max v1 [m/s]", self.v1_max), ("min v1 [m/s]", self.v1_min),
                ("max v2 [m/s]", self.v2_max), ("min v2 [m/s]", self.v2_min),
                ("max p [Pa]", self.p_max), ("min p [Pa]", self.p_min),
                ("compliance [J]", self.compliance), ("u1 at A [m]", self.u1_a), ("u2 at A [m]", self.u2_a)]


# reference values for the zero-design case on the 302 x 150 mesh
APPENDIX_REFERENCE = {"v1_max": 1.89729912, "compliance": 4.88899052e-2, "u1_a": 4.13607818e-3}


def appendix_case_1(nx=302, ny=150, mu=1.0, stress_mode=StressMode.PRESSURE):
    """rho = 0 in the design box, rho = 1 in the column, E_max = 1e7."""
    spec = column_in_channel(nx, ny, mu=mu, e_max=1e7)
    return spec, CouplingConfig(stress_mode=stress_mode)


def run_case(spec, coupling, rho_design=0.0, model=None):
    model = model or spec.model(coupling)
    rho = model.physical_density(np.full(model.design.size, rho_design))
    an = model.analyze(rho)
    a = model.mesh.nearest_vnode(*spec.point_a)
    fl = an.fluid
    rep = CaseReport(float(fl.v1.max()), float(fl.v1.min()), float(fl.v2.max()), float(fl.v2.min()),
                     float(fl.p.max()), float(fl.p.min()), float(an.compliance),
                     float(an.u1[a]), float(an.u2[a]), fl.iterations)
    return rep, an, model


def pressure_spike(mesh, p):
    """Location and size of the largest local pressure deviation.

    The indicator is |p_i - mean of the 4 grid neighbours| on the pressure
    grid (edge values replicated), which ignores the smooth pressure drop along
    the channel and picks out corner singularities.
    """
    P = np.real(p).reshape(mesh.ny + 1, mesh.nx + 1)
    pad = np.pad(P, 1, mode="edge")
    nb = 0.25 * (pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:])
    dev = np.abs(P - nb).ravel()
    k = int(np.argmax(dev))
    return mesh.pcoords[k], float(dev[k])


def poiseuille_case(nx=20, ny=10, v_max=1.0, mu=1.0, lx=2.0, ly=1.0):
    """Empty channel; returns the solver and the exact solution functions."""
    mesh = build_channel_mesh(nx, ny, lx, ly)
    params = FluidParams(mu=mu, alpha_max=0.0, alpha_min=0.0)
    solver = FluidSolver(mesh, params, FluidBC(v_max))

    def exact(x, y):
        v1 = v_max * 4.0 * y * (ly - y) / ly ** 2
        p = 8.0 * mu * v_max / ly ** 2 * (lx - x)
        return v1, np.zeros_like(v1), p

    return mesh, solver, exact


def couette_state(mesh, gamma):
    """Simple shear v1 = gamma * y with zero pressure."""
    from tofsi.fluid import FluidState

    y = mesh.vcoords[:, 1]
    return FluidState(gamma * y, np.zeros_like(y), np.zeros(mesh.n_pnodes))


def with_coupling(cfg, **kw):
    return replace(cfg, **kw)
