import pytest

from mvspde.config import env_overrides, load_config, parse_config
from mvspde.errors import ConfigurationError

BASE = {"kind": "chaos", "T": 1.0, "dt": 0.01, "N_schedule": [4, 16], "N_ref": 32}


def test_defaults_parse():
    cfg = parse_config(BASE)
    assert cfg.steps == 100 and cfg.model.family == "spde" and cfg.seeds.count == 1


@pytest.mark.parametrize("patch", [
    {"bogus": 1},
    {"model": {"viscosty": 1.0}},
    {"N_schedule": [16, 4]},
    {"N_schedule": [4, 4]},
    {"T": 1.0, "dt": 0.3},
    {"N_ref": 8},
    {"schema_version": 2},
    {"kind": "sweep"},
    {"audit": {"samples": 0}},
    {"model": {"equation": "kuramoto_sivashinsky", "dim": 2}},
    {"model": {"viscosity": 0.0}},
    {"galerkin": {"modes": [8]}},
])
def test_invalid_configs_rejected(patch):
    with pytest.raises(ConfigurationError):
        parse_config({**BASE, **patch})


def test_dt_grid_tolerance_is_one_ulp():
    assert parse_config({**BASE, "T": 0.3, "dt": 0.1}).steps == 3


def test_env_overrides():
    env = {"MVSPDE_SEED": "42", "MVSPDE_OUT": "/tmp/o", "MVSPDE_THREADS": "3",
           "MVSPDE_SET__model__viscosity": "0.5", "MVSPDE_SET__seeds__count": "7", "HOME": "/root"}
    over = env_overrides(env)
    cfg = parse_config(BASE, over)
    assert cfg.seeds.master == 42 and cfg.output.dir == "/tmp/o" and cfg.workers == 3
    assert cfg.model.viscosity == 0.5 and cfg.seeds.count == 7


def test_load_config_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('kind = "audit"\n[model]\nmodes = 8\n[audit]\nsamples = 3\n')
    cfg = load_config(p, {"seeds": {"master": 9}}, environ={"MVSPDE_SEED": "1"})
    assert cfg.kind == "audit" and cfg.seeds.master == 9 and cfg.audit.samples == 3


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "missing.toml", environ={})
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = \n")
    with pytest.raises(ConfigurationError):
        load_config(bad, environ={})


def test_digest_ignores_location_and_workers():
    a = parse_config({**BASE, "output": {"dir": "x"}, "workers": 1})
    b = parse_config({**BASE, "output": {"dir": "y"}, "workers": 8})
    c = parse_config({**BASE, "seeds": {"master": 3}})
    assert a.digest() == b.digest() != c.digest()


def test_spde_spec_from_config():
    cfg = parse_config({**BASE, "model": {"equation": "cahn_hilliard", "dim": 1, "modes": 12,
                                          "kernel": {"alpha": 0.3}, "noise": {"modes": 4}}})
    spec = cfg.model.spde_spec(seed=5, modes=6)
    assert spec.modes == 6 and spec.kernel.alpha == 0.3 and spec.noise.modes == 4 and spec.noise.seed == 5
