"""Experiment drivers behind the command line: chaos decay, Galerkin
refinement, pathwise stability, condition audits and single simulations.

Every output byte is a function of the config and master seed.  Cells
(one simulation each) may run on several worker threads; results are
journaled as they finish and re-emitted sorted by cell key, so the final
files do not depend on completion order.  Wall-clock figures go to a
separate ``timing.json``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import conditions, rng, snapshot
from .config import ExperimentConfig
from .ensemble import ParticleEnsemble, PathEnsemble
from .errors import BlowUpError, ConfigurationError
from .measures import chaos_statistic
from .mvsde import (
    TruncatedModel,
    double_well,
    mean_field_multiplicative,
    mean_field_ou,
    moment_monitor,
    simulate_mvsde,
)
from .particles import NoiseModel, SpdeModelSpec, initial_ensemble, simulate_system
from .spectral import SpectralGrid, leray_coeffs, norm_sq_coeffs, random_scalar_coeffs, random_velocity_coeffs

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3


@dataclass
class ExperimentResult:
    summary: dict
    rows: list[dict]
    exit_code: int = EXIT_OK
    timing: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# persistence


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _rows_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k)) for k in cols})
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


class Journal:
    """Append-only JSON-lines record of finished cells, keyed by config hash."""

    def __init__(self, path: Path, digest: str, resume: bool):
        self.path = path
        self.digest = digest
        self._lock = threading.Lock()
        self.done: dict[str, dict] = {}
        if resume and path.exists():
            for line in path.read_text().splitlines():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn final line from an interrupted run
                if rec.get("config") == self.digest:
                    self.done[rec["cell"]] = rec["row"]
        elif path.exists():
            path.unlink()

    def append(self, cell: str, row: dict):
        line = json.dumps({"config": self.digest, "cell": cell, "row": row}, sort_keys=True)
        with self._lock:
            with self.path.open("a") as fh:
                fh.write(line + "\n")
                fh.flush()
            self.done[cell] = row


def run_cells(cells: list[tuple[str, object]], fn, journal: Journal, workers: int) -> list[dict]:
    """Evaluate ``fn(payload)`` for cells not yet journaled; rows come back in cell order."""
    todo = [(key, p) for key, p in cells if key not in journal.done]

    def work(item):
        key, payload = item
        row = fn(payload)
        journal.append(key, row)
        return key

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, todo))
    else:
        for item in todo:
            work(item)
    return [journal.done[key] for key, _ in cells]


def write_outputs(out: Path, result: ExperimentResult, plot_rows: list[dict] | None = None):
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "summary.json", _json(result.summary))
    _atomic_write(out / "rows.csv", _rows_csv(result.rows))
    if plot_rows is not None:
        _atomic_write(out / "plot.csv", _rows_csv(plot_rows))
    _atomic_write(out / "timing.json", _json(result.timing))


def load_result(out) -> dict:
    """Read summary and rows back and verify the stored aggregates."""
    out = Path(out)
    summary = json.loads((out / "summary.json").read_text())
    with (out / "rows.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    if summary.get("kind") == "chaos":
        stats: dict[int, list[float]] = {}
        for r in rows:
            if r["status"] == "ok":
                stats.setdefault(int(r["N"]), []).append(float(r["statistic"]))
        for entry in summary["per_N"]:
            vals = stats.get(entry["N"], [])
            if vals and not math.isclose(float(np.mean(vals)), entry["mean"], rel_tol=1e-12, abs_tol=1e-300):
                raise ConfigurationError(f"summary mean for N={entry['N']} disagrees with rows")
    return {"summary": summary, "rows": rows}


# ---------------------------------------------------------------------------
# model plumbing


def mvsde_model(cfg: ExperimentConfig):
    m = cfg.model
    d = m.state_dim
    if m.sde == "mean_field_ou":
        model = mean_field_ou(m.a, m.beta, m.s, d)
    elif m.sde == "double_well":
        model = double_well(m.beta, m.s, d)
    else:
        model = mean_field_multiplicative(m.beta, m.s, d)
    return TruncatedModel(model, m.cutoff) if m.cutoff else model


def mvsde_initial(cfg: ExperimentConfig, N: int, seed: int) -> np.ndarray:
    m = cfg.model
    z = rng.stream_normals(seed, 0, np.arange(N), m.state_dim, rng.TAG_INIT)
    return m.initial.mean + m.initial.std * z


def smooth_initial(spec: SpdeModelSpec, N: int, seed: int, rate: float,
                   energy: float | None = None) -> ParticleEnsemble:
    """Analytic random fields: unit-variance modes damped by ``exp(-rate |k|)``."""
    grid = spec.grid
    kabs = np.sqrt(sum(k.astype(float) ** 2 for k in grid.kint))
    damp = np.exp(-rate * kabs)
    states = []
    for i in range(N):
        if spec.kind == "velocity":
            c = leray_coeffs(random_velocity_coeffs(grid, seed, 0.0, stream=i) * damp, grid)
        else:
            c = random_scalar_coeffs(grid, seed, 0.0, stream=i) * damp
        if energy is not None:
            c = c * np.sqrt(energy / float(norm_sq_coeffs(c, grid, 0, spec.kind == "velocity")))
            if spec.kind == "velocity":
                c = leray_coeffs(c, grid)
        states.append(c)
    return ParticleEnsemble(np.stack(states), spec.kind, grid)


def spde_initial(cfg: ExperimentConfig, spec: SpdeModelSpec, N: int, seed: int) -> ParticleEnsemble:
    ic = cfg.model.initial
    if ic.smooth_rate is not None:
        return smooth_initial(spec, N, seed, ic.smooth_rate, ic.energy)
    return initial_ensemble(spec, N, seed, ic.energy, ic.decay)


def simulate_cell(cfg: ExperimentConfig, N: int, seed: int, threads: int = 1,
                  spec: SpdeModelSpec | None = None, initial=None) -> PathEnsemble:
    if cfg.model.family == "mvsde":
        x0 = mvsde_initial(cfg, N, seed) if initial is None else initial
        return simulate_mvsde(mvsde_model(cfg), x0, cfg.T, cfg.dt, seed, cfg.save_stride)
    spec = spec or cfg.model.spde_spec(seed)
    ens = spde_initial(cfg, spec, N, seed) if initial is None else initial
    return simulate_system(spec, N, ens, cfg.T, cfg.dt, cfg.save_stride, seed=seed, threads=threads)


def _sup_moment(path: PathEnsemble) -> tuple[float, float]:
    rep = moment_monitor(path, 2.0)
    return rep.sup_moment, rep.dissipation


def _slope(ns, means) -> float:
    ns, means = np.asarray(ns, float), np.asarray(means, float)
    ok = means > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ns[ok]), np.log(means[ok]), 1)[0])


# ---------------------------------------------------------------------------
# experiments


def run_chaos_experiment(cfg: ExperimentConfig, out: Path, resume: bool = False,
                         workers: int | None = None) -> ExperimentResult:
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers
    digest = cfg.digest()
    journal = Journal(out / "journal.jsonl", digest, resume)
    master = cfg.seeds.master
    ref_seed = rng.derive_seed(master, "reference")
    t0 = time.perf_counter()
    cells = [(f"N={N}:r={r}", (N, r)) for N in cfg.N_schedule for r in range(cfg.seeds.count)]
    reference: dict = {}
    ref_lock = threading.Lock()

    def get_reference():
        with ref_lock:
            if "path" not in reference:
                reference["path"] = simulate_cell(cfg, cfg.N_ref, ref_seed)
            return reference["path"]

    def cell(payload):
        N, r = payload
        seed = rng.derive_seed(master, "cell", N, r)
        row = {"N": N, "replicate": r, "seed": seed, "statistic": float("nan"),
               "sup_moment": float("nan"), "dissipation": float("nan"), "status": "ok"}
        try:
            ref = get_reference()
            path = simulate_cell(cfg, N, seed)
        except BlowUpError as err:
            row["status"] = f"blowup:particle={err.particle}:t={err.time!r}"
            return row
        row["statistic"] = chaos_statistic(path, ref, N, seed=rng.derive_seed(seed, "subsample"))
        row["sup_moment"], row["dissipation"] = _sup_moment(path)
        return row

    try:
        rows = run_cells(cells, cell, journal, workers)
    except BlowUpError as err:  # reference blew up
        raise err
    per_n = []
    for N in cfg.N_schedule:
        vals = [r["statistic"] for r in rows if r["N"] == N and r["status"] == "ok"]
        moms = [r["sup_moment"] for r in rows if r["N"] == N and r["status"] == "ok"]
        k = len(vals)
        per_n.append({"N": N, "count": k,
                      "mean": float(np.mean(vals)) if k else float("nan"),
                      "se": float(np.std(vals, ddof=1) / np.sqrt(k)) if k > 1 else float("nan"),
                      "moment_mean": float(np.mean(moms)) if k else float("nan")})
    means = [e["mean"] for e in per_n]
    moments = [e["moment_mean"] for e in per_n]
    failed = sum(r["status"] != "ok" for r in rows)
    summary = {
        "kind": "chaos", "config_hash": digest, "per_N": per_n,
        "slope": _slope(cfg.N_schedule, means),
        "strictly_decreasing": bool(all(b < a for a, b in zip(means, means[1:]))),
        "moment_spread": float(max(moments) / min(moments) - 1.0) if min(moments) > 0 else float("nan"),
        "failed_cells": failed,
    }
    plot = [{"series": "chaos", "x": e["N"], "y": e["mean"], "err": e["se"]} for e in per_n]
    elapsed = time.perf_counter() - t0
    steps = cfg.steps * (sum(cfg.N_schedule) * cfg.seeds.count + cfg.N_ref)
    modes = 1 if cfg.model.family == "mvsde" else (2 * cfg.model.modes + 1) ** cfg.model.dim
    result = ExperimentResult(summary, rows, EXIT_BLOWUP if failed else EXIT_OK,
                              {"wall_seconds": elapsed,
                               "particle_mode_steps_per_second": steps * modes / max(elapsed, 1e-12)})
    write_outputs(out, result, plot)
    return result


def _embed(coeffs: np.ndarray, small: SpectralGrid, big: SpectralGrid) -> np.ndarray:
    """Zero-pad centred coefficients from ``small`` onto ``big`` (trailing axes)."""
    pad = big.modes - small.modes
    width = [(0, 0)] * (coeffs.ndim - small.dim) + [(pad, pad)] * small.dim
    return np.pad(coeffs, width)


def _restrict(coeffs: np.ndarray, big: SpectralGrid, small: SpectralGrid) -> np.ndarray:
    cut = big.modes - small.modes
    sl = (Ellipsis,) + (slice(cut, cut + small.side),) * big.dim
    return coeffs[sl]


def run_galerkin_refinement(cfg: ExperimentConfig, out: Path, resume: bool = False,
                            workers: int | None = None) -> ExperimentResult:
    if cfg.model.family != "spde":
        raise ConfigurationError("Galerkin refinement needs a field model")
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers
    digest = cfg.digest()
    journal = Journal(out / "journal.jsonl", digest, resume)
    modes = cfg.galerkin.modes
    t0 = time.perf_counter()

    def spec_for(seed, M):
        base = cfg.model.spde_spec(seed, M)
        noise = NoiseModel(cfg.galerkin.noise_modes, base.noise.c0, seed, base.noise.zero_mean_mode)
        return SpdeModelSpec(base.equation, M, base.dim, base.domain_size, base.viscosity, base.phi,
                             base.kernel, noise)

    def replicate(r):
        seed = rng.derive_seed(cfg.seeds.master, "galerkin", r)
        finest = spec_for(seed, modes[-1])
        # X^n_0 = P_n X_0 with X_0 drawn once on the finest grid
        x0 = spde_initial(cfg, finest, cfg.N, seed)
        paths = {}
        rows = []
        for M in modes:
            spec = spec_for(seed, M)
            init = ParticleEnsemble(_restrict(x0.states, finest.grid, spec.grid), spec.kind, spec.grid)
            try:
                paths[M] = simulate_cell(cfg, cfg.N, seed, spec=spec, initial=init)
            except BlowUpError as err:
                rows.append({"replicate": r, "M": M, "status": f"blowup:t={err.time!r}"})
                return rows
        for M, M2 in zip(modes, modes[1:]):
            a, b = paths[M], paths[M2]
            diff = _embed(a.states, a.grid, b.grid) - b.states
            gap = norm_sq_coeffs(diff, b.grid, 0, b.kind == "velocity")  # (times, N)
            sup_m, diss = _sup_moment(a)
            rows.append({"replicate": r, "M": M, "M_next": M2,
                         "difference": float(np.sqrt(gap.max())),
                         "sup_moment": sup_m, "dissipation": diss, "status": "ok"})
        sup_m, diss = _sup_moment(paths[modes[-1]])
        rows.append({"replicate": r, "M": modes[-1], "M_next": 0, "difference": float("nan"),
                     "sup_moment": sup_m, "dissipation": diss, "status": "ok"})
        return rows

    cells = [(f"r={r}", r) for r in range(cfg.seeds.count)]
    nested = run_cells(cells, lambda r: {"rows": replicate(r)}, journal, workers)
    rows = [row for item in nested for row in item["rows"]]
    for row in rows:
        for k in ("M_next", "difference", "sup_moment", "dissipation"):
            row.setdefault(k, float("nan"))
    ok = [r for r in rows if r["status"] == "ok"]
    pairs = []
    for M, M2 in zip(modes, modes[1:]):
        d = [r["difference"] for r in ok if r["M"] == M and r["M_next"] == M2]
        pairs.append({"M": M, "M_next": M2, "difference": float(np.mean(d)) if d else float("nan")})
    ratios = [p["difference"] / q["difference"] if q["difference"] > 0 else float("inf")
              for p, q in zip(pairs, pairs[1:])]
    moments = {M: float(np.mean([r["sup_moment"] for r in ok if r["M"] == M])) for M in modes
               if any(r["M"] == M for r in ok)}
    summary = {"kind": "galerkin", "config_hash": digest, "differences": pairs,
               "decay_ratios": ratios, "sup_moments": {str(k): v for k, v in moments.items()},
               "moment_spread": (max(moments.values()) / min(moments.values()) - 1.0) if moments else float("nan"),
               "failed_cells": sum(r["status"] != "ok" for r in rows)}
    plot = [{"series": "galerkin", "x": p["M"], "y": p["difference"], "err": 0.0} for p in pairs]
    result = ExperimentResult(summary, rows, EXIT_BLOWUP if summary["failed_cells"] else EXIT_OK,
                              {"wall_seconds": time.perf_counter() - t0})
    write_outputs(out, result, plot)
    return result


def perturbation(spec: SpdeModelSpec, ens: ParticleEnsemble, seed: int) -> np.ndarray:
    """Unit-L2 random directions, one per particle."""
    grid = spec.grid
    h = []
    for i in ens.stream_ids:
        if spec.kind == "velocity":
            c = random_velocity_coeffs(grid, rng.derive_seed(seed, "perturb"), 3.0, stream=int(i), energy=1.0)
        else:
            c = random_scalar_coeffs(grid, rng.derive_seed(seed, "perturb"), 2.0, stream=int(i), energy=1.0)
        h.append(c)
    return np.stack(h)


def gronwall_exponent(times, gaps, eps: float) -> float:
    """Least ``lam`` with ``gap(t) <= eps exp(lam t)`` on every positive grid time."""
    times, gaps = np.asarray(times), np.asarray(gaps)
    pos = times > 0
    if eps == 0 or not pos.any():
        return 0.0
    with np.errstate(divide="ignore"):
        lam = np.log(np.maximum(gaps[pos], 1e-300) / eps) / times[pos]
    return float(max(lam.max(), 0.0)) if np.all(np.isfinite(lam)) else float("inf")


def run_stability_experiment(cfg: ExperimentConfig, out: Path, resume: bool = False,
                             workers: int | None = None) -> ExperimentResult:
    if cfg.model.family != "spde":
        raise ConfigurationError("stability runs need a field model")
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers
    digest = cfg.digest()
    journal = Journal(out / "journal.jsonl", digest, resume)
    t0 = time.perf_counter()
    plot: list[dict] = []

    def replicate(r):
        seed = rng.derive_seed(cfg.seeds.master, "stability", r)
        spec = cfg.model.spde_spec(seed)
        x0 = spde_initial(cfg, spec, cfg.N, seed)
        h = perturbation(spec, x0, seed)
        base = simulate_cell(cfg, cfg.N, seed, spec=spec, initial=x0)
        velocity = spec.kind == "velocity"
        rows, curves = [], []
        for eps in cfg.stability.eps:
            y = x0.states + eps * h
            if velocity:
                y = leray_coeffs(y, spec.grid)
            pert = simulate_cell(cfg, cfg.N, seed, spec=spec, initial=x0.replace(y))
            gaps = np.sqrt(norm_sq_coeffs(pert.states - base.states, spec.grid, 0, velocity)).max(axis=1)
            lam = gronwall_exponent(base.times, gaps, eps)
            rows.append({"replicate": r, "eps": eps, "terminal_gap": float(gaps[-1]),
                         "gain": float(gaps[-1] / eps) if eps else 0.0, "gronwall": lam, "status": "ok"})
            curves.append([float(g) for g in gaps])
        return {"rows": rows, "curves": curves, "times": [float(t) for t in base.times]}

    cells = [(f"r={r}", r) for r in range(cfg.seeds.count)]
    results = run_cells(cells, replicate, journal, workers)
    rows = [row for item in results for row in item["rows"]]
    eps_list = cfg.stability.eps
    gains = [float(np.mean([r["gain"] for r in rows if r["eps"] == e])) for e in eps_list]
    term = [float(np.mean([r["terminal_gap"] for r in rows if r["eps"] == e])) for e in eps_list]
    ratios = [a / b if b > 0 else float("nan") for a, b in zip(term, term[1:])]
    eps_ratios = [a / b if b > 0 else float("nan") for a, b in zip(eps_list, eps_list[1:])]
    summary = {"kind": "stability", "config_hash": digest, "eps": eps_list, "mean_terminal_gap": term,
               "mean_gain": gains, "gap_ratios": ratios, "eps_ratios": eps_ratios,
               "max_gronwall": float(max(r["gronwall"] for r in rows)), "failed_cells": 0}
    first = results[0]
    for e, curve in zip(eps_list, first["curves"]):
        plot.extend({"series": f"eps={e!r}", "x": t, "y": g, "err": 0.0} for t, g in zip(first["times"], curve))
    result = ExperimentResult(summary, rows, EXIT_OK, {"wall_seconds": time.perf_counter() - t0})
    write_outputs(out, result, plot)
    return result


def run_audits(cfg: ExperimentConfig, out: Path, resume: bool = False,
               workers: int | None = None) -> ExperimentResult:
    if cfg.model.family != "spde":
        raise ConfigurationError("audits need a field model")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    spec = cfg.model.spde_spec(cfg.seeds.master)
    model = conditions.broken_sigma_model(spec) if cfg.model.broken_sigma else None
    reports = conditions.run_all(spec, cfg.audit.samples, cfg.seeds.master, model)
    rows = [{"condition": r.condition, "model": r.model, "samples": r.samples, "passed": r.passed,
             "fitted_constant": r.fitted_constant, "declared_constant": r.declared_constant,
             "worst_margin": r.worst_margin} for r in reports]
    summary = {"kind": "audit", "config_hash": cfg.digest(), "all_passed": all(r.passed for r in reports),
               "reports": [r.to_dict() for r in reports], "note": conditions.DISCLAIMER}
    result = ExperimentResult(summary, rows, EXIT_OK if summary["all_passed"] else EXIT_AUDIT,
                              {"wall_seconds": time.perf_counter() - t0})
    write_outputs(out, result)
    return result


def run_simulation(cfg: ExperimentConfig, out: Path, resume: bool = False,
                   workers: int | None = None) -> ExperimentResult:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    seed = rng.derive_seed(cfg.seeds.master, "simulate")
    code = EXIT_OK
    try:
        path = simulate_cell(cfg, cfg.N, seed, threads=workers or cfg.workers)
        status = "ok"
    except BlowUpError as err:
        path = err.partial
        status = f"blowup:particle={err.particle}:t={err.time!r}"
        code = EXIT_BLOWUP
    rows = []
    if path is not None and len(path.times):
        norms = path.norms_sq()
        rows = [{"t": float(t), "mean_energy": float(norms[i].mean()), "max_energy": float(norms[i].max())}
                for i, t in enumerate(path.times)]
        eq = "vector" if cfg.model.family == "mvsde" else cfg.model.equation
        snapshot.write(out / "final.snap", path.at(len(path.times) - 1), float(path.times[-1]), cfg.dt,
                       None if eq == "vector" else eq)
    summary = {"kind": "simulate", "config_hash": cfg.digest(), "seed": seed, "status": status}
    if path is not None and len(path.times):
        mon = moment_monitor(path, 2.0)
        summary.update({"sup_moment": mon.sup_moment, "dissipation": mon.dissipation, "T": float(path.times[-1])})
    result = ExperimentResult(summary, rows, code, {"wall_seconds": time.perf_counter() - t0})
    write_outputs(out, result)
    return result


RUNNERS = {
    "simulate": run_simulation,
    "chaos": run_chaos_experiment,
    "galerkin": run_galerkin_refinement,
    "stability": run_stability_experiment,
    "audit": run_audits,
}
