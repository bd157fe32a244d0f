import json

import numpy as np

from mvspde import snapshot
from mvspde.cli import main
from mvspde.ensemble import ParticleEnsemble


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_audit_exit_codes(tmp_path, capsys):
    good = write(tmp_path, 'kind = "audit"\n[model]\nmodes = 8\n[audit]\nsamples = 10\n')
    assert main(["audit", "--config", good, "--out", str(tmp_path / "a")]) == 0
    bad = write(tmp_path, 'kind = "audit"\n[model]\nmodes = 8\nbroken_sigma = true\n[audit]\nsamples = 10\n', "b.toml")
    assert main(["audit", "--config", bad, "--out", str(tmp_path / "b")]) == 1
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert summary["all_passed"] is False


def test_config_errors_exit_2(tmp_path, capsys):
    empty = write(tmp_path, 'kind = "audit"\n[audit]\nsamples = 0\n')
    assert main(["audit", "--config", empty]) == 2
    unknown = write(tmp_path, 'kind = "audit"\nflavour = 1\n', "u.toml")
    assert main(["audit", "--config", unknown]) == 2
    assert main(["chaos", "--config", write(tmp_path, 'kind = "audit"\n', "m.toml")]) == 2
    assert main(["chaos", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_blow_up_exit_3(tmp_path):
    cfg = write(tmp_path, 'kind = "simulate"\nT = 0.1\ndt = 0.01\nN = 2\n[model]\nfamily = "mvsde"\n'
                          'sde = "double_well"\n[model.initial]\nmean = 1e120\n')
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_seed_and_threads_flags_and_env(tmp_path, monkeypatch):
    cfg = write(tmp_path, 'kind = "chaos"\nT = 0.2\ndt = 0.02\nN_schedule = [4, 8]\nN_ref = 16\n'
                          '[seeds]\ncount = 2\n[model]\nfamily = "mvsde"\n')
    assert main(["chaos", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "5", "--threads", "1"]) == 0
    assert main(["chaos", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "5", "--threads", "8"]) == 0
    monkeypatch.setenv("MVSPDE_SEED", "5")
    monkeypatch.setenv("MVSPDE_OUT", str(tmp_path / "c"))
    assert main(["chaos", "--config", cfg]) == 0
    for f in ("summary.json", "rows.csv", "plot.csv"):
        a = (tmp_path / "a" / f).read_bytes()
        assert a == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()
    assert main(["chaos", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "5", "--resume"]) == 0


def test_ot_between_snapshots(tmp_path, capsys):
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    y = np.array([[1.0, 0.0], [0.0, 3.0]])
    snapshot.write(tmp_path / "x.snap", ParticleEnsemble(x))
    snapshot.write(tmp_path / "y.snap", ParticleEnsemble(y))
    assert main(["ot", str(tmp_path / "x.snap"), str(tmp_path / "y.snap")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["w2"] - np.sqrt(9 / 2)) < 1e-15
    (tmp_path / "bad.snap").write_bytes(b"nope")
    assert main(["ot", str(tmp_path / "x.snap"), str(tmp_path / "bad.snap")]) == 2


def test_every_experiment_subcommand_runs(tmp_path):
    cfgs = {
        "simulate": 'kind = "simulate"\nT = 0.02\ndt = 0.01\nN = 2\n[model]\nmodes = 4\n',
        "galerkin": 'kind = "galerkin"\nT = 0.02\ndt = 0.01\nN = 1\n[galerkin]\nmodes = [4, 8]\nnoise_modes = 2\n',
        "stability": 'kind = "stability"\nT = 0.02\ndt = 0.01\nN = 2\n[model]\nmodes = 4\n',
    }
    for cmd, text in cfgs.items():
        out = tmp_path / cmd
        assert main([cmd, "--config", write(tmp_path, text, cmd + ".toml"), "--out", str(out)]) == 0
        assert (out / "summary.json").exists() and (out / "rows.csv").exists()
