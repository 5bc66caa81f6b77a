"""Run configuration: a nested YAML tree, validated against the defaults below.

Unknown keys are rejected.  Individual keys can be overridden with dot paths,
e.g. ``fluid.mu=0.1`` or ``schedule.breakpoints=[11,21]``; values are parsed
as YAML scalars/lists.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from tofsi.coupling import CouplingConfig
from tofsi.fluid import FluidParams
from tofsi.optimizer import ContinuationSchedule, OptimizerConfig
from tofsi.problems import ProblemSpec

PROBLEMS = ("column", "poiseuille", "appendix")
# the zero-design verification case uses a stiffer column
APPENDIX_E_MAX = 1e7

DEFAULTS = {
    "problem": "column",
    "seed": 0,
    "mesh": {"nx": 76, "ny": 38},
    "geometry": {
        "lx": 2.0,
        "ly": 1.0,
        "design_box": [0.3, 0.0, 1.7, 0.8],
        "column_box": [0.975, 0.0, 1.025, 0.5],
        "point_a": [0.975, 0.5],
    },
    "fluid": {"mu": 1.0, "rho_f": 1.0, "alpha_max": 1e9, "alpha_min": 0.0, "p_alpha": 2.5e-6, "v_max": 1.0},
    "solid": {"e_max": 1e5, "e_min": 1e-5, "nu": 0.3},
    "coupling": {
        "stress_mode": "pressure",
        "integral_form": "volume",
        "upsilon_max": 1.0,
        "upsilon_min": 0.0,
        "use_recovered_derivatives": True,
    },
    "newton": {"tol": 1e-10, "max_iter": 25},
    "optimizer": {
        "volume_fraction": 0.1,
        "r_min": 5.3,
        "max_iter": 100,
        "move": 0.1,
        "objective_offset": 1.0,
        "objective_scale": 1.0,
        "eta": [0.5, 0.49, 0.51],
        "retarget_every": 2,
        "robust_objective": "eroded",
        "log_all_fields": False,
        "snapshot_every": 0,
    },
    "schedule": {
        "breakpoints": [21, 41, 61, 81],
        "p_e_values": [1.5, 2.0, 3.0, 4.0],
        "beta_values": [8.0, 16.0, 32.0, 64.0],
        "delta": 2.0,
        "p_e0": 1.0,
        "p_upsilon0": 1.0,
        "beta0": 4.0,
    },
    "solve": {"rho_design": None, "design_file": None},
    "verify": {"n_elements": 8, "step": 1e-10, "threshold_pct": 1e-6, "rho_design": 0.1},
    "output": {"dir": "out", "plots": True},
}


class ConfigError(ValueError):
    pass


def _merge(base, update, prefix=""):
    for k, v in update.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{path}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{path}' must be a section")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def apply_override(tree, expr):
    """Apply one ``a.b.c=value`` override in place."""
    if "=" not in expr:
        raise ConfigError(f"override {expr!r} is not of the form key=value")
    key, raw = expr.split("=", 1)
    parts = key.strip().split(".")
    node = tree
    for i, p in enumerate(parts[:-1]):
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key '{'.'.join(parts[: i + 1])}'")
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key '{key.strip()}'")
    node[parts[-1]] = yaml.safe_load(raw)


@dataclass
class RunConfig:
    tree: dict

    def __getitem__(self, k):
        return self.tree[k]

    @property
    def problem(self):
        return self.tree["problem"]

    @property
    def seed(self):
        return int(self.tree["seed"])

    @property
    def output_dir(self):
        return Path(self.tree["output"]["dir"])

    def fluid_params(self):
        f = dict(self.tree["fluid"])
        f.pop("v_max")
        return FluidParams(**{k: float(v) for k, v in f.items()})

    def problem_spec(self):
        g = self.tree["geometry"]
        s = self.tree["solid"]
        return ProblemSpec(nx=int(self.tree["mesh"]["nx"]), ny=int(self.tree["mesh"]["ny"]),
                           lx=float(g["lx"]), ly=float(g["ly"]),
                           design_box=tuple(float(v) for v in g["design_box"]),
                           column_box=tuple(float(v) for v in g["column_box"]),
                           point_a=tuple(float(v) for v in g["point_a"]),
                           v_max=float(self.tree["fluid"]["v_max"]), fluid=self.fluid_params(),
                           e_max=APPENDIX_E_MAX if self.problem == "appendix" else float(s["e_max"]),
                           e_min=float(s["e_min"]), nu=float(s["nu"]),
                           volume_fraction=float(self.tree["optimizer"]["volume_fraction"]))

    def coupling(self):
        c = self.tree["coupling"]
        return CouplingConfig(stress_mode=c["stress_mode"], integral_form=c["integral_form"],
                              upsilon_max=float(c["upsilon_max"]), upsilon_min=float(c["upsilon_min"]),
                              use_recovered_derivatives=bool(c["use_recovered_derivatives"]))

    def schedule(self):
        s = self.tree["schedule"]
        return ContinuationSchedule(breakpoints=tuple(int(v) for v in s["breakpoints"]),
                                    p_e_values=tuple(float(v) for v in s["p_e_values"]),
                                    beta_values=tuple(float(v) for v in s["beta_values"]),
                                    delta=float(s["delta"]), p_e0=float(s["p_e0"]),
                                    p_upsilon0=float(s["p_upsilon0"]), beta0=float(s["beta0"]))

    def optimizer(self):
        o = dict(self.tree["optimizer"])
        o.pop("snapshot_every")
        o["eta"] = tuple(float(v) for v in o["eta"])
        o["max_iter"] = int(o["max_iter"])
        o["retarget_every"] = int(o["retarget_every"])
        return OptimizerConfig(schedule=self.schedule(), **o)

    def model(self, coupling=None, mesh=None):
        spec = self.problem_spec()
        n = self.tree["newton"]
        return spec.model(coupling or self.coupling(), mesh=mesh, newton_tol=float(n["tol"]),
                          newton_max_iter=int(n["max_iter"]))

    def validate(self):
        """Build every parameter object once so bad values fail at load time."""
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        try:
            for k in ("nx", "ny"):
                if int(self.tree["mesh"][k]) < 1:
                    raise ValueError(f"mesh.{k} must be positive")
            self.problem_spec()
            self.coupling()
            self.optimizer()
            v = self.tree["verify"]
            if int(v["n_elements"]) < 1:
                raise ValueError("verify.n_elements must be >= 1")
            if not float(v["step"]) > 0:
                raise ValueError("verify.step must be positive")
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return self

    def dump(self):
        return yaml.safe_dump(self.tree, sort_keys=False)


def load_config(path=None, overrides=()):
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping at the top level")
        _merge(tree, data)
    for expr in overrides:
        apply_override(tree, expr)
    return RunConfig(tree).validate()
