"""Command-line front end.

Subcommands: solve, verify-sensitivities, optimize, crosscheck, sweep.  Every
artifact goes under the configured output directory together with a
``manifest.txt`` of content hashes.  Exit codes: 0 success, 1 solver failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from tofsi import output, plotting
from tofsi.config import ConfigError, RunConfig, load_config
from tofsi.coupling import CouplingConfig, StressMode
from tofsi.fluid import NewtonDivergence, SingularSystemError
from tofsi.mesh import NONDESIGN
from tofsi.mma import MmaError
from tofsi.optimizer import (OptimizationAborted, attached_to_column, band_fraction, discreteness_measure,
                             frozen_objective, run_optimization)
from tofsi.problems import poiseuille_case, pressure_spike, run_case
from tofsi.recovery import RecoveryError
from tofsi.sensitivity import pick_elements, verify

log = logging.getLogger("tofsi")

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2
SOLVER_ERRORS = (NewtonDivergence, SingularSystemError, RecoveryError, MmaError, OptimizationAborted,
                 np.linalg.LinAlgError)
SWEEP_PARAMETERS = ("p_alpha", "delta", "re_mu", "re_vmax")


class UsageError(ValueError):
    pass


def _section(title, body):
    print(f"===== {title} =====")
    print(body.rstrip("\n"))
    print(f"===== end {title} =====")


def pressure_on_vnodes(mesh, p):
    """Bilinear pressure interpolated onto the 9-node velocity grid."""
    out = np.zeros(mesh.n_vnodes, dtype=np.result_type(p, float))
    pe = p[mesh.pconn]
    out[mesh.conn[:, :4]] = pe
    for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 3), (3, 0))):
        out[mesh.conn[:, 4 + k]] = 0.5 * (pe[:, a] + pe[:, b])
    out[mesh.conn[:, 8]] = pe.mean(axis=1)
    return out


def region_bbox(mesh, code):
    e = mesh.elements_in(code)
    ex, ey = e % mesh.nx, e // mesh.nx
    return (mesh.x_lines[ex.min()], mesh.y_lines[ey.min()], mesh.x_lines[ex.max() + 1], mesh.y_lines[ey.max() + 1])


# -- solve ------------------------------------------------------------------------

def _solve_poiseuille(cfg, out):
    g = cfg["geometry"]
    mesh, solver, exact = poiseuille_case(cfg["mesh"]["nx"], cfg["mesh"]["ny"], cfg["fluid"]["v_max"],
                                          cfg["fluid"]["mu"], g["lx"], g["ly"])
    st = solver.solve(np.zeros(mesh.n_elements))
    v1e, v2e, pe = exact(mesh.vcoords[:, 0], mesh.vcoords[:, 1])
    err1 = float(np.max(np.abs(st.v1 - v1e)))
    err2 = float(np.max(np.abs(st.v2 - v2e)))
    errp = float(np.max(np.abs(st.p - exact(mesh.pcoords[:, 0], mesh.pcoords[:, 1])[2])))
    fields = {"v1": st.v1, "v2": st.v2, "p": pressure_on_vnodes(mesh, st.p)}
    _write_fields(out, mesh, fields)
    _write_newton_log(out, st)
    ok = err1 < 1e-10 and err2 < 1e-10
    rep = (f"max |v1 error| = {err1:.3e} ({'<' if err1 < 1e-10 else '>='} 1e-10)\n"
           f"max |v2 error| = {err2:.3e}\nmax |p error| = {errp:.3e}\n"
           f"newton iterations = {st.iterations}\nstatus = {'PASS' if ok else 'FAIL'}")
    out.write_text("report.txt", rep + "\n")
    _section("poiseuille", rep)
    if cfg["output"]["plots"]:
        plotting.field_plot(out.path("v1.png"), mesh, st.v1, "v1 [m/s]")
    return EXIT_OK if ok else EXIT_SOLVER


def _design_value(cfg, model):
    s = cfg["solve"]
    if s["design_file"]:
        nx, ny, elements, rho = output.load_design(s["design_file"])
        if (nx, ny) != (model.mesh.nx, model.mesh.ny) or not np.array_equal(elements, model.design):
            raise UsageError(f"design file {s['design_file']} does not match the configured mesh")
        return rho
    if cfg.problem == "appendix":
        return 0.0
    v = s["rho_design"]
    return float(cfg["optimizer"]["volume_fraction"] if v is None else v)


def _solve_column(cfg, out):
    spec = cfg.problem_spec()
    coupling = cfg.coupling()
    model = cfg.model(coupling)
    mesh = model.mesh
    rho_d = _design_value(cfg, model)
    rep, an, _ = run_case(spec, coupling, rho_design=rho_d, model=model)
    fl = an.fluid
    p_v = pressure_on_vnodes(mesh, fl.p)
    fields = {"v1": fl.v1, "v2": fl.v2, "p": p_v, "u1": an.u1, "u2": an.u2}
    _write_fields(out, mesh, fields, cell={"rho": np.real(an.rho)})
    _write_newton_log(out, fl)
    # largest local pressure spike relative to the top corners of the column
    x0, _, x1, y1 = region_bbox(mesh, NONDESIGN)
    (xp, yp), spike = pressure_spike(mesh, fl.p)
    dist = min(np.hypot(xp - x0, yp - y1), np.hypot(xp - x1, yp - y1)) / mesh.hx
    lines = [f"{name} = {val:.8e}" for name, val in rep.rows()]
    lines += [f"Re = {spec.reynolds:.6g}", f"newton iterations = {rep.newton_iterations}",
              f"pressure spike {spike:.4e} Pa at ({xp:.5f}, {yp:.5f}), "
              f"{dist:.2f} elements from the nearest column top corner"]
    text = "\n".join(lines)
    out.write_text("report.txt", text + "\n")
    output.write_csv(out.path("report.csv"), ["quantity", "value"], [(n, repr(float(v))) for n, v in rep.rows()])
    _section("solve", text)
    if cfg["output"]["plots"]:
        speed = np.hypot(np.real(fl.v1), np.real(fl.v2))
        plotting.field_plot(out.path("velocity.png"), mesh, speed, "|v| [m/s]", outline=np.real(an.rho))
        plotting.field_plot(out.path("pressure.png"), mesh, p_v, "p [Pa]", cmap="coolwarm", outline=np.real(an.rho))
        plotting.field_plot(out.path("displacement.png"), mesh, np.hypot(np.real(an.u1), np.real(an.u2)),
                            "|u| [m]", cmap="magma", outline=np.real(an.rho))
    return EXIT_OK


def _write_fields(out, mesh, fields, cell=None):
    vec = {}
    if "v1" in fields:
        vec["velocity"] = np.column_stack([np.real(fields["v1"]), np.real(fields["v2"])])
    if "u1" in fields:
        vec["displacement"] = np.column_stack([np.real(fields["u1"]), np.real(fields["u2"])])
    vec["pressure"] = np.real(fields["p"])
    output.write_vtk(out.path("fields.vtk"), mesh, point_data=vec, cell_data=cell)
    output.write_node_csv(out.path("fields.csv"), mesh, fields)


def _write_newton_log(out, state):
    output.write_csv(out.path("newton_log.csv"), ["iteration", "residual_norm"],
                     [(i, repr(float(r))) for i, r in enumerate(state.residuals)])


def cmd_solve(cfg, args, out):
    if cfg.problem == "poiseuille":
        return _solve_poiseuille(cfg, out)
    return _solve_column(cfg, out)


# -- verify ---------------------------------------------------------------------

def cmd_verify(cfg, args, out):
    v = cfg["verify"]
    n = v["n_elements"] if args.n_elements is None else args.n_elements
    if n < 1:
        raise UsageError("--n-elements must be at least 1")
    step = float(v["step"] if args.step is None else args.step)
    if not step > 0:
        raise UsageError("--step must be positive")
    modes = args.modes or [cfg["coupling"]["stress_mode"]]
    status = EXIT_OK
    csv_parts = []
    for mode in modes:
        coupling = CouplingConfig(**{**_coupling_kwargs(cfg), "stress_mode": StressMode(mode)})
        model = cfg.model(coupling)
        elements = pick_elements(model, n, cfg.seed)
        rho = model.physical_density(np.full(model.design.size, float(v["rho_design"])))
        rep = verify(model, rho, elements, step=step, threshold_pct=float(v["threshold_pct"]), seed=cfg.seed)
        _section(f"sensitivities {mode}", rep.to_text())
        out.write_text(f"sensitivities_{mode}.txt", rep.to_text() + "\n")
        csv_parts.append(rep.to_csv() if not csv_parts else rep.to_csv().split("\n", 1)[1])
        if not rep.passed:
            status = EXIT_SOLVER
    out.write_text("sensitivities.csv", "".join(csv_parts))
    return status


def _coupling_kwargs(cfg):
    c = cfg.coupling()
    return dict(stress_mode=c.stress_mode, integral_form=c.integral_form, upsilon_max=c.upsilon_max,
                upsilon_min=c.upsilon_min, use_recovered_derivatives=c.use_recovered_derivatives)


# -- optimize -------------------------------------------------------------------

def optimize_to(cfg, out, label="optimize"):
    """Run one optimization and write its artifacts; returns a summary dict."""
    model = cfg.model()
    ocfg = cfg.optimizer()
    mesh = model.mesh
    every = int(cfg["optimizer"]["snapshot_every"])

    def snapshot(it, fields, rec):
        if every > 0 and it % every == 0:
            output.write_pgm(out.path(f"snapshots/design_{it:03d}.pgm"),
                             output.design_image(mesh, model.design, fields.nominal))

    try:
        run = run_optimization(model, ocfg, callback=snapshot)
    except OptimizationAborted as exc:
        out.write_text("run_log.csv", exc.log.to_csv())
        out.write_text("run_timing.csv", exc.log.to_csv(timing=True))
        raise
    out.write_text("run_log.csv", run.to_csv())
    out.write_text("run_timing.csv", run.to_csv(timing=True))
    output.write_pgm(out.path("design.pgm"), output.design_image(mesh, model.design, run.nominal))
    output.save_design(out.path("design.npz"), mesh, model.design, run.nominal, eroded=run.eroded,
                       dilated=run.dilated)
    rho = np.real(model.physical_density(run.nominal))
    output.write_vtk(out.path("design.vtk"), mesh, cell_data={"rho_nominal": rho,
                                                              "rho_eroded": model.physical_density(run.eroded),
                                                              "rho_dilated": model.physical_density(run.dilated)})
    if cfg["output"]["plots"]:
        plotting.convergence_plot(out.path("convergence.png"), run, title=label)
        plotting.design_plot(out.path("design.png"), mesh, rho, label)
    attached, n_att = attached_to_column(mesh, run.nominal)
    f = run.column("f")
    return {"f": float(f[-1]), "f5": float(f[min(4, f.size - 1)]), "DM": discreteness_measure(run.nominal),
            "vol_frac": float(run.column("vol_frac")[-1]), "vol_target": float(run.column("vol_target")[-1]),
            "band_fraction": band_fraction(run.nominal), "attached": attached, "attached_elements": n_att,
            "iterations": len(run.records), "nominal": run.nominal, "mesh": mesh}


def _summary_text(s):
    return "\n".join([f"iterations = {s['iterations']}", f"final objective = {s['f']:.8e}",
                      f"objective at iteration 5 = {s['f5']:.8e}", f"DM = {s['DM']:.3f} %",
                      f"dilated volume = {s['vol_frac']:.5f} (target {s['vol_target']:.5f})",
                      f"band fraction = {s['band_fraction']:.4f}",
                      f"attached to column = {s['attached']} ({s['attached_elements']} design elements)"])


def cmd_optimize(cfg, args, out):
    s = optimize_to(cfg, out)
    text = _summary_text(s)
    out.write_text("summary.txt", text + "\n")
    _section("optimize", text)
    return EXIT_OK


# -- crosscheck -----------------------------------------------------------------

def parse_condition(token):
    """``pressure``, ``total_stress``, ``re=10`` or combinations joined by ``:``."""
    mode, re = None, None
    for part in token.split(":"):
        part = part.strip()
        if part in (m.value for m in StressMode):
            mode = part
        elif part.startswith("re="):
            try:
                re = float(part[3:])
            except ValueError:
                raise UsageError(f"bad Reynolds number in condition {token!r}") from None
            if not re > 0:
                raise UsageError(f"Reynolds number must be positive in {token!r}")
        else:
            raise UsageError(f"unknown analysis condition {part!r}")
    return mode, re


def _condition_config(cfg, mode, re):
    tree = copy.deepcopy(cfg.tree)
    if mode is not None:
        tree["coupling"]["stress_mode"] = mode
    if re is not None:
        f = tree["fluid"]
        f["mu"] = f["v_max"] * f["rho_f"] / re  # l_c = 1
    return RunConfig(tree).validate()


def crosscheck_matrix(cfg, designs, conditions, field="objective"):
    """Objective of each design (columns) under each condition (rows).

    ``field="objective"`` scores each design by the configured robust
    objective (the eroded field by default); ``"nominal"`` uses the nominal
    field only.
    """
    kind = cfg.optimizer().robust_objective if field == "objective" else "nominal"
    loaded = []
    for d in designs:
        nx, ny, elements, _ = output.load_design(d)
        loaded.append((nx, ny, elements, output.load_design_fields(d)))
    sched = cfg.schedule()
    p_e, p_u, _ = sched.params_at(cfg.optimizer().max_iter)
    mat = np.zeros((len(conditions), len(designs)))
    for i, tok in enumerate(conditions):
        ccfg = _condition_config(cfg, *parse_condition(tok))
        model = ccfg.model()
        model.set_penalties(p_e=p_e, p_upsilon=p_u)
        for j, (nx, ny, elements, fields) in enumerate(loaded):
            if (nx, ny) != (model.mesh.nx, model.mesh.ny) or not np.array_equal(elements, model.design):
                raise UsageError(f"design {designs[j]} is on a {nx}x{ny} mesh that does not match the configuration")
            try:
                mat[i, j] = frozen_objective(model, fields, kind)
            except KeyError as exc:
                raise UsageError(f"design {designs[j]}: {exc.args[0]}") from exc
    return mat


def cmd_crosscheck(cfg, args, out):
    if not args.designs:
        raise UsageError("need at least one design file")
    if not args.analyses:
        raise UsageError("need at least one analysis condition")
    for tok in args.analyses:
        parse_condition(tok)
    mat = crosscheck_matrix(cfg, args.designs, args.analyses, args.field)
    names = [Path(d).stem if Path(d).stem != "design" else Path(d).parent.name for d in args.designs]
    rows = []
    lines = ["condition".ljust(20) + "".join(n[:18].rjust(20) for n in names)]
    for tok, row in zip(args.analyses, mat):
        best = int(np.argmin(row))
        rows.append([tok] + [repr(float(v)) for v in row] + [names[best]])
        lines.append(tok.ljust(20) + "".join((f"{v:.6e}" + ("*" if j == best else " ")).rjust(20)
                                             for j, v in enumerate(row)))
    lines.append("* row-wise best")
    output.write_csv(out.path("crosscheck.csv"), ["condition"] + names + ["best"], rows)
    text = "\n".join(lines)
    out.write_text("crosscheck.txt", text + "\n")
    _section("crosscheck", text)
    return EXIT_OK


# -- sweep -----------------------------------------------------------------------

def sweep_tree(tree, parameter, value):
    tree = copy.deepcopy(tree)
    f = tree["fluid"]
    if parameter == "p_alpha":
        f["p_alpha"] = value
    elif parameter == "delta":
        tree["schedule"]["delta"] = value
    elif parameter == "re_mu":
        f["mu"] = f["v_max"] * f["rho_f"] / value
    elif parameter == "re_vmax":
        f["v_max"] = value * f["mu"] / f["rho_f"]
    else:
        raise UsageError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    return tree


def _sweep_member(tree, root, tag):
    out = output.OutputDir(Path(root) / tag)
    try:
        s = optimize_to(RunConfig(tree).validate(), out, label=tag)
    except SOLVER_ERRORS as exc:
        return {"status": "failed", "message": f"{type(exc).__name__}: {exc}", "files": out.files}
    s.pop("mesh")
    return {"status": "ok", **s, "files": out.files}


def cmd_sweep(cfg, args, out):
    if not args.values:
        raise UsageError("need at least one sweep value")
    try:
        values = [float(v) for v in args.values.split(",")]
    except ValueError:
        raise UsageError(f"sweep values must be numbers: {args.values!r}") from None
    trees = [sweep_tree(cfg.tree, args.parameter, v) for v in values]
    tags = [f"{args.parameter}_{v:g}" for v in values]
    for t in trees:
        RunConfig(t).validate()
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_member, trees, [out.root] * len(trees), tags))
    else:
        results = [_sweep_member(t, out.root, tag) for t, tag in zip(trees, tags)]
    rows, designs, labels = [], [], []
    for v, tag, r in zip(values, tags, results):
        out.files.extend(r.pop("files"))
        if r["status"] == "ok":
            rows.append([repr(v), repr(r["f"]), repr(r["DM"]), repr(r["band_fraction"]), "ok", ""])
            designs.append(r["nominal"])
            labels.append(tag)
        else:
            rows.append([repr(v), "", "", "", "failed", r["message"]])
    output.write_csv(out.path("sweep_summary.csv"), ["value", "f", "DM", "band_fraction", "status", "message"],
                     rows)
    if designs and cfg["output"]["plots"]:
        model = cfg.model()
        full = [np.real(model.physical_density(d)) for d in designs]
        plotting.gallery(out.path("gallery.png"), model.mesh, full, labels)
    text = "\n".join(",".join(r[:5]) for r in rows)
    _section(f"sweep {args.parameter}", "value,f,DM,band_fraction,status\n" + text)
    return EXIT_OK if all(r[4] == "ok" for r in rows) else EXIT_SOLVER


# -- entry point -----------------------------------------------------------------

COMMANDS = {"solve": cmd_solve, "verify-sensitivities": cmd_verify, "optimize": cmd_optimize,
            "crosscheck": cmd_crosscheck, "sweep": cmd_sweep}


def build_parser():
    ap = argparse.ArgumentParser(prog="tofsi", description="Topology optimization of structures loaded by "
                                 "steady incompressible flow.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="YAML run configuration")
        p.add_argument("-s", "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration key, e.g. fluid.mu=0.1")
        p.add_argument("-o", "--output", help="output directory (overrides output.dir)")
        return p

    common(sub.add_parser("solve", help="analyze one design"))
    p = common(sub.add_parser("verify-sensitivities", help="adjoint vs. complex-step check"))
    p.add_argument("-n", "--n-elements", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--modes", nargs="+", choices=[m.value for m in StressMode])
    common(sub.add_parser("optimize", help="run the optimizer"))
    p = common(sub.add_parser("crosscheck", help="evaluate frozen designs under several conditions"))
    p.add_argument("--designs", nargs="+", default=[])
    p.add_argument("--analyses", nargs="+", default=[],
                   help="conditions such as pressure, total_stress, re=10, total_stress:re=10")
    p.add_argument("--field", choices=("objective", "nominal"), default="objective",
                   help="score designs by the robust objective (default) or the nominal field")
    p = common(sub.add_parser("sweep", help="one optimization per parameter value"))
    p.add_argument("--parameter", required=True, choices=SWEEP_PARAMETERS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--workers", type=int, default=1)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        overrides = list(args.overrides)
        if args.output:
            overrides.append(f"output.dir={args.output}")
        cfg = load_config(args.config, overrides)
        out = output.OutputDir(cfg.output_dir)
        out.write_text("config.yaml", cfg.dump())
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SOLVER_ERRORS as exc:
        log.error("solver failure: %s: %s", type(exc).__name__, exc)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    finally:
        if out is not None:
            out.write_manifest()


if __name__ == "__main__":
    sys.exit(main())
