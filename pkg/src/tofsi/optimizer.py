"""Density filter, three-field Heaviside projection, continuation and the MMA loop."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import label
from scipy.spatial import cKDTree

from tofsi.fluid import NewtonDivergence
from tofsi.mesh import DESIGN, NONDESIGN
from tofsi.mma import MmaState, mma_update

log = logging.getLogger(__name__)


# -- filtering and projection -------------------------------------------------

def filter_matrix(mesh, elements, r_min):
    """Row-normalised conic weights max(0, r - d) between element centroids.

    ``r_min`` is in element widths (``mesh.hx``).
    """
    if r_min < 1:
        raise ValueError(f"filter radius must be at least one element width, got {r_min}")
    c = mesh.centroids()[elements]
    r = r_min * mesh.hx
    tree = cKDTree(c)
    pairs = tree.sparse_distance_matrix(tree, r, output_type="coo_matrix")
    w = r - pairs.data
    # the diagonal is dropped by sparse_distance_matrix (zero distance)
    n = len(elements)
    rows = np.concatenate([pairs.row, np.arange(n)])
    cols = np.concatenate([pairs.col, np.arange(n)])
    vals = np.concatenate([w, np.full(n, r)])
    H = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    s = np.asarray(H.sum(axis=1)).ravel()
    return sp.diags(1.0 / s) @ H


def density_filter(H, x):
    return H @ x


def filter_transpose(H, g):
    return H.T @ g


def heaviside_project(rho_t, eta, beta):
    """Smoothed Heaviside (tanh) projection and its derivative."""
    if not 0 < eta < 1:
        raise ValueError(f"threshold must be in (0, 1), got {eta}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    th = np.tanh(beta * (rho_t - eta))
    return (np.tanh(beta * eta) + th) / den, beta * (1.0 - th ** 2) / den


def discreteness_measure(rho):
    """100 * mean(4 rho (1 - rho)) in percent."""
    rho = np.asarray(rho, dtype=float)
    return float(100.0 * np.sum(4.0 * rho * (1.0 - rho)) / rho.size)


@dataclass
class RobustFields:
    x: np.ndarray
    filtered: np.ndarray
    nominal: np.ndarray
    dilated: np.ndarray
    eroded: np.ndarray
    d_nominal: np.ndarray
    d_dilated: np.ndarray
    d_eroded: np.ndarray


def project_fields(H, x, beta, eta=(0.5, 0.49, 0.51)):
    rt = density_filter(H, x)
    n, dn = heaviside_project(rt, eta[0], beta)
    d, dd = heaviside_project(rt, eta[1], beta)
    e, de = heaviside_project(rt, eta[2], beta)
    return RobustFields(x, rt, n, d, e, dn, dd, de)


# -- continuation ----------------------------------------------------------------

@dataclass(frozen=True)
class ContinuationSchedule:
    breakpoints: tuple = (21, 41, 61, 81)
    p_e_values: tuple = (1.5, 2.0, 3.0, 4.0)
    beta_values: tuple = (8.0, 16.0, 32.0, 64.0)
    delta: float = 2.0
    p_e0: float = 1.0
    p_upsilon0: float = 1.0
    beta0: float = 4.0

    def __post_init__(self):
        if any(b2 <= b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("continuation breakpoints must be strictly increasing")
        if not self.delta >= 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if not len(self.breakpoints) == len(self.p_e_values) == len(self.beta_values):
            raise ValueError("schedule lists must have equal length")

    @property
    def p_upsilon_values(self):
        inc = np.diff(np.concatenate([[self.p_e0], self.p_e_values])) / self.delta
        return tuple(float(v) for v in self.p_upsilon0 + np.cumsum(inc))

    def params_at(self, iteration):
        """(p_E, p_Y, beta) in force at a 1-based iteration."""
        p_e, p_u, beta = self.p_e0, self.p_upsilon0, self.beta0
        for b, pe, pu, bt in zip(self.breakpoints, self.p_e_values, self.p_upsilon_values, self.beta_values):
            if iteration >= b:
                p_e, p_u, beta = pe, pu, bt
        return p_e, p_u, beta


@dataclass
class OptimizerConfig:
    volume_fraction: float = 0.1
    r_min: float = 5.3
    max_iter: int = 100
    move: float = 0.1
    objective_offset: float = 1.0
    objective_scale: float = 1.0
    eta: tuple = (0.5, 0.49, 0.51)
    retarget_every: int = 2
    robust_objective: str = "eroded"  # or "minmax"
    log_all_fields: bool = False
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)

    def __post_init__(self):
        if not 0 < self.volume_fraction < 1:
            raise ValueError(f"volume fraction must be in (0, 1), got {self.volume_fraction}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.robust_objective not in ("eroded", "minmax"):
            raise ValueError(f"unknown robust objective {self.robust_objective!r}")
        if not self.eta[1] < self.eta[0] < self.eta[2]:
            raise ValueError("need eta_dilated < eta_nominal < eta_eroded")


@dataclass
class OptRunLog:
    records: list = field(default_factory=list)
    design: np.ndarray | None = None  # final raw design variables
    nominal: np.ndarray | None = None  # final projected nominal field
    dilated: np.ndarray | None = None
    eroded: np.ndarray | None = None
    status: str = "running"
    message: str = ""

    COLUMNS = ("iter", "f", "f_nominal", "f_dilated", "vol_frac", "vol_target", "DM", "max_change",
               "p_E", "p_Y", "beta", "seconds")

    def append(self, rec):
        self.records.append(rec)

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.records], dtype=float)

    def to_csv(self, timing=False):
        """Run log as CSV; wall-clock seconds are left out unless ``timing`` so
        that identical runs give identical files."""
        cols = self.COLUMNS if timing else tuple(c for c in self.COLUMNS if c != "seconds")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            w.writerow([_fmt(r.get(c)) for c in cols])
        return buf.getvalue()


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# -- main loop --------------------------------------------------------------------

def _analyze(model, rho_design):
    rho = model.physical_density(rho_design)
    try:
        return model.analyze(rho)
    except NewtonDivergence:
        log.warning("Newton failed from the warm start; retrying from the boundary-data guess")
        model.reset_warm_start()
        return model.analyze(rho)


def run_optimization(model, cfg=None, callback=None):
    """Minimise the robust compliance subject to a dilated volume bound."""
    cfg = cfg or OptimizerConfig()
    mesh = model.mesh
    design = model.design
    H = filter_matrix(mesh, design, cfg.r_min)
    vol = mesh.element_areas()[design]
    v0 = vol.sum()
    n = design.size
    x = np.full(n, cfg.volume_fraction)
    minmax = cfg.robust_objective == "minmax"
    m = 4 if minmax else 1
    mma = MmaState(n, m, move=cfg.move)
    if minmax:
        mma.a0 = 1.0
        mma.a = np.array([1.0, 1.0, 1.0, 0.0])
    vol_target = cfg.volume_fraction
    out = OptRunLog()
    sched = cfg.schedule
    try:
        for it in range(1, cfg.max_iter + 1):
            t0 = time.perf_counter()
            p_e, p_u, beta = sched.params_at(it)
            model.set_penalties(p_e=p_e, p_upsilon=p_u)
            fields = project_fields(H, x, beta, cfg.eta)
            if it > 1 and cfg.retarget_every > 0 and (it - 1) % cfg.retarget_every == 0:
                vol_target = cfg.volume_fraction * (vol @ fields.dilated) / (vol @ fields.nominal)

            an_e = _analyze(model, fields.eroded)
            f_e = float(an_e.compliance)
            g_e = model.compliance_gradient(an_e)
            df_e = filter_transpose(H, g_e * fields.d_eroded)
            f_n = f_d = np.nan
            df_n = df_d = None
            if minmax or cfg.log_all_fields:
                an_n = _analyze(model, fields.nominal)
                an_d = _analyze(model, fields.dilated)
                f_n, f_d = float(an_n.compliance), float(an_d.compliance)
                if minmax:
                    df_n = filter_transpose(H, model.compliance_gradient(an_n) * fields.d_nominal)
                    df_d = filter_transpose(H, model.compliance_gradient(an_d) * fields.d_dilated)

            vf = float(vol @ fields.dilated / v0)
            gvol = vf - vol_target
            dgvol = filter_transpose(H, vol / v0 * fields.d_dilated)
            s = cfg.objective_scale
            if minmax:
                f0, df0 = 0.0, np.zeros(n)
                g = np.array([s * f_n + cfg.objective_offset, s * f_e + cfg.objective_offset,
                              s * f_d + cfg.objective_offset, gvol])
                dg = np.vstack([s * df_n, s * df_e, s * df_d, dgvol])
            else:
                f0, df0 = s * f_e + cfg.objective_offset, s * df_e
                g, dg = np.array([gvol]), dgvol[None, :]
            xnew = mma_update(mma, x, f0, df0, g, dg)
            change = float(np.max(np.abs(xnew - x)))
            f_rep = max(f_n, f_e, f_d) if minmax else f_e
            rec = dict(iter=it, f=f_rep, f_nominal=f_n, f_dilated=f_d, vol_frac=vf, vol_target=vol_target,
                       DM=discreteness_measure(fields.nominal), max_change=change, p_E=p_e, p_Y=p_u,
                       beta=beta, seconds=time.perf_counter() - t0)
            out.append(rec)
            log.info("it %3d  f=%.6e  V_d=%.4f (target %.4f)  DM=%.2f%%  change=%.3f  pE=%.2f pY=%.2f beta=%g",
                     it, f_rep, vf, vol_target, rec["DM"], change, p_e, p_u, beta)
            if callback is not None:
                callback(it, fields, rec)
            x = xnew
        out.status = "done"
    except Exception as exc:  # keep the partial log for the caller
        out.status = "failed"
        out.message = f"{type(exc).__name__}: {exc}"
        out.design = x
        log.error("optimisation aborted at iteration %d: %s", len(out.records) + 1, out.message)
        raise OptimizationAborted(out) from exc
    # fields reported for the final design variables
    p_e, p_u, beta = sched.params_at(cfg.max_iter)
    final = project_fields(H, x, beta, cfg.eta)
    out.design = x
    out.nominal, out.dilated, out.eroded = final.nominal, final.dilated, final.eroded
    return out


class OptimizationAborted(RuntimeError):
    def __init__(self, run_log):
        self.log = run_log
        super().__init__(run_log.message)


def frozen_objective(model, fields, kind="eroded"):
    """Objective of stored projected fields at the model's current penalties.

    ``kind`` follows ``OptimizerConfig.robust_objective`` ("eroded" or
    "minmax"); "nominal" evaluates the nominal field alone.
    """
    def c(name):
        if name not in fields:
            raise KeyError(f"design has no {name} field")
        return float(np.real(model.analyze(model.physical_density(fields[name])).compliance))

    if kind == "minmax":
        return max(c("nominal"), c("eroded"), c("dilated"))
    if kind in ("eroded", "nominal"):
        return c(kind)
    raise ValueError(f"unknown objective kind {kind!r}")


def volume_fraction(mesh, elements, rho):
    vol = mesh.element_areas()[elements]
    return float(vol @ rho / vol.sum())


def attached_to_column(mesh, rho_design, threshold=0.5):
    """True if thresholded solid in the design box forms a region touching the column."""
    solid = np.zeros(mesh.n_elements, dtype=bool)
    solid[mesh.region == NONDESIGN] = True
    d = mesh.elements_in(DESIGN)
    solid[d] = np.asarray(rho_design) > threshold
    grid = solid.reshape(mesh.ny, mesh.nx)
    lab, _ = label(grid)  # 4-connectivity
    col = np.unique(lab.ravel()[mesh.region == NONDESIGN])
    col = col[col > 0]
    comp = np.isin(lab.ravel(), col)
    attached_design = int(np.sum(comp[d]))
    return attached_design > 0, attached_design


def band_fraction(rho, lo=0.1, hi=0.9):
    """Fraction of elements with intermediate density (lo, hi)."""
    rho = np.asarray(rho)
    return float(np.mean((rho > lo) & (rho < hi)))
