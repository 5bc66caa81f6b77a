import pytest

from tofsi.config import DEFAULTS, ConfigError, load_config


def test_defaults_build():
    cfg = load_config()
    assert cfg.problem == "column"
    assert cfg.optimizer().schedule.p_upsilon_values == pytest.approx((1.25, 1.5, 2.0, 2.5))
    assert cfg.problem_spec().nx == DEFAULTS["mesh"]["nx"]


def test_yaml_file_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("mesh:\n  nx: 20\n  ny: 10\nfluid:\n  mu: 0.1\n")
    cfg = load_config(p, ["coupling.stress_mode=total_stress", "schedule.breakpoints=[11, 21, 31, 41]"])
    assert cfg["mesh"]["nx"] == 20
    assert cfg.problem_spec().reynolds == pytest.approx(10.0)
    assert cfg.coupling().stress_mode.value == "total_stress"
    assert cfg.schedule().breakpoints == (11, 21, 31, 41)


@pytest.mark.parametrize("text,key", [("bogus: 1\n", "bogus"), ("fluid:\n  viscosity: 2\n", "fluid.viscosity")])
def test_unknown_keys_rejected(tmp_path, text, key):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError, match=key):
        load_config(p)


def test_bad_override_and_values():
    with pytest.raises(ConfigError, match="mesh.nz"):
        load_config(overrides=["mesh.nz=3"])
    with pytest.raises(ConfigError):
        load_config(overrides=["fluid.mu"])
    with pytest.raises(ConfigError):
        load_config(overrides=["fluid.mu=-1"])
    with pytest.raises(ConfigError):
        load_config(overrides=["problem=wing"])
    with pytest.raises(ConfigError):
        load_config(overrides=["optimizer.volume_fraction=2"])


def test_dump_roundtrip(tmp_path):
    cfg = load_config(overrides=["seed=7"])
    p = tmp_path / "d.yaml"
    p.write_text(cfg.dump())
    assert load_config(p).tree == cfg.tree
