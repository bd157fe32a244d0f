import json

import numpy as np
import pytest

from mvspde import experiments
from mvspde.config import parse_config
from mvspde.ensemble import ParticleEnsemble
from mvspde.errors import ConfigurationError
from mvspde.particles import InteractionKernel, NoiseModel, SpdeModelSpec, simulate_system
from mvspde.spectral import norm_sq_coeffs

OU = {"kind": "chaos", "T": 1.0, "dt": 0.02, "save_stride": 5, "N_schedule": [8, 32], "N_ref": 64,
      "seeds": {"count": 4, "master": 1}, "model": {"family": "mvsde"}}

FILES = ("summary.json", "rows.csv", "plot.csv")


def test_chaos_rows_summary_and_cross_check(tmp_path):
    res = experiments.run_chaos_experiment(parse_config(OU), tmp_path)
    assert res.exit_code == 0 and len(res.rows) == 8
    means = [e["mean"] for e in res.summary["per_N"]]
    assert means[0] == pytest.approx(np.mean([r["statistic"] for r in res.rows if r["N"] == 8]), rel=1e-15)
    loaded = experiments.load_result(tmp_path)
    assert loaded["summary"] == json.loads((tmp_path / "summary.json").read_text())
    assert "wall_seconds" in json.loads((tmp_path / "timing.json").read_text())
    summ = json.loads((tmp_path / "summary.json").read_text())
    summ["per_N"][0]["mean"] += 1.0
    (tmp_path / "summary.json").write_text(json.dumps(summ))
    with pytest.raises(ConfigurationError):
        experiments.load_result(tmp_path)


def test_chaos_zero_noise_zero_coupling_is_zero(tmp_path):
    cfg = parse_config({**OU, "model": {"family": "mvsde", "s": 0.0, "beta": 0.0,
                                        "initial": {"mean": 0.5, "std": 0.0}}})
    res = experiments.run_chaos_experiment(cfg, tmp_path)
    assert all(r["statistic"] == 0.0 for r in res.rows)


def test_chaos_identical_reruns_and_worker_counts(tmp_path):
    cfg = parse_config(OU)
    experiments.run_chaos_experiment(cfg, tmp_path / "a", workers=1)
    experiments.run_chaos_experiment(cfg, tmp_path / "b", workers=1)
    experiments.run_chaos_experiment(cfg, tmp_path / "c", workers=8)
    for f in FILES:
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()


def test_resume_skips_journaled_cells(tmp_path):
    cfg = parse_config(OU)
    experiments.run_chaos_experiment(cfg, tmp_path)
    journal = tmp_path / "journal.jsonl"
    lines = journal.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["row"]["statistic"] = 123.0
    lines[0] = json.dumps(rec)
    # a torn final line from an interrupted writer is ignored
    journal.write_text("\n".join(lines) + "\n{\"config\": ")
    res = experiments.run_chaos_experiment(cfg, tmp_path, resume=True)
    assert 123.0 in [r["statistic"] for r in res.rows]
    fresh = experiments.run_chaos_experiment(cfg, tmp_path, resume=False)
    assert 123.0 not in [r["statistic"] for r in fresh.rows]


def test_resume_ignores_other_configs(tmp_path):
    experiments.run_chaos_experiment(parse_config(OU), tmp_path)
    other = parse_config({**OU, "seeds": {"count": 4, "master": 2}})
    j = experiments.Journal(tmp_path / "journal.jsonl", other.digest(), resume=True)
    assert j.done == {}


def test_chaos_blow_up_is_recorded_and_flagged(tmp_path):
    cfg = parse_config({**OU, "model": {"family": "mvsde", "sde": "double_well",
                                        "initial": {"mean": 1e120, "std": 1.0}}})
    res = experiments.run_chaos_experiment(cfg, tmp_path)
    assert res.exit_code == experiments.EXIT_BLOWUP
    assert res.summary["failed_cells"] == 8
    assert all(r["status"].startswith("blowup") for r in res.rows)


def test_cutoff_tames_the_same_model(tmp_path):
    cfg = parse_config({**OU, "model": {"family": "mvsde", "sde": "double_well", "cutoff": 4.0,
                                        "initial": {"mean": 1e120, "std": 1.0}}})
    assert experiments.run_chaos_experiment(cfg, tmp_path).exit_code == 0


GAL = {"kind": "galerkin", "T": 0.2, "dt": 0.01, "save_stride": 5, "N": 2,
       "galerkin": {"modes": [4, 8, 16], "noise_modes": 4},
       "model": {"initial": {"smooth_rate": 0.5}, "noise": {"c0": 0.0}}}


def test_galerkin_smooth_deterministic_decay(tmp_path):
    res = experiments.run_galerkin_refinement(parse_config(GAL), tmp_path)
    assert all(r >= 4 for r in res.summary["decay_ratios"])
    assert res.summary["moment_spread"] < 0.25


def test_galerkin_resolved_linear_flow_at_machine_precision():
    # a single low mode is an exact steady shear for B, so every level evolves it identically
    coarse = SpdeModelSpec(modes=4, kernel=InteractionKernel("zero"))
    fine = coarse.with_modes(8)
    c = np.zeros((1, 2) + fine.grid.shape, dtype=complex)
    c[0, 1, 9, 8] = c[0, 1, 7, 8] = 1.0
    pf = simulate_system(fine, 1, ParticleEnsemble(c, "velocity", fine.grid), 0.5, 0.01, 10)
    small = experiments._restrict(c, fine.grid, coarse.grid)
    pc = simulate_system(coarse, 1, ParticleEnsemble(small, "velocity", coarse.grid), 0.5, 0.01, 10)
    diff = experiments._embed(pc.states, coarse.grid, fine.grid) - pf.states
    assert np.sqrt(norm_sq_coeffs(diff, fine.grid, 0, True).max()) < 1e-14


def test_galerkin_needs_field_model(tmp_path):
    with pytest.raises(ConfigurationError):
        experiments.run_galerkin_refinement(parse_config({**GAL, "model": {"family": "mvsde"}}), tmp_path)


STAB = {"kind": "stability", "T": 1.0, "dt": 0.01, "save_stride": 10, "N": 3,
        "model": {"modes": 8, "kernel": {"alpha": 0.1}}, "stability": {"eps": [1e-3, 5e-4, 0.0]}}


def test_stability_linear_scaling_and_zero_gap(tmp_path):
    res = experiments.run_stability_experiment(parse_config(STAB), tmp_path)
    s = res.summary
    assert s["gap_ratios"][0] == pytest.approx(2.0, rel=0.2)
    assert s["mean_terminal_gap"][2] == 0.0
    assert np.isfinite(s["max_gronwall"])
    zero_rows = [r for r in res.rows if r["eps"] == 0.0]
    assert all(r["terminal_gap"] == 0.0 for r in zero_rows)


def test_gronwall_exponent():
    t = np.linspace(0, 1, 11)
    assert experiments.gronwall_exponent(t, 1e-3 * np.exp(2 * t), 1e-3) == pytest.approx(2.0)
    assert experiments.gronwall_exponent(t, 1e-3 * np.exp(-t), 1e-3) == 0.0


def test_audit_runner_exit_codes(tmp_path):
    ok = experiments.run_audits(parse_config({"kind": "audit", "model": {"modes": 8}, "audit": {"samples": 20}}),
                                tmp_path / "ok")
    assert ok.exit_code == 0 and ok.summary["all_passed"]
    bad = experiments.run_audits(parse_config({"kind": "audit", "model": {"modes": 8, "broken_sigma": True},
                                               "audit": {"samples": 20}}), tmp_path / "bad")
    assert bad.exit_code == experiments.EXIT_AUDIT
    assert not bad.summary["reports"][0]["passed"]


def test_simulation_runner_writes_snapshot(tmp_path):
    cfg = parse_config({"kind": "simulate", "T": 0.05, "dt": 0.01, "N": 2, "model": {"modes": 4}})
    res = experiments.run_simulation(cfg, tmp_path)
    assert res.exit_code == 0 and (tmp_path / "final.snap").exists()
    assert len(res.rows) == 6


def test_smooth_initial_consistent_across_levels():
    fine = SpdeModelSpec(modes=8)
    a = experiments.smooth_initial(fine, 2, 3, 0.5)
    b = experiments.smooth_initial(fine.with_modes(4), 2, 3, 0.5)
    assert np.array_equal(experiments._restrict(a.states, fine.grid, b.grid), b.states)
