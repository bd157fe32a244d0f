"""Weakly interacting systems of N spectral fields.

Each particle is a velocity field (2D Navier-Stokes) or a scalar field
(Cahn-Hilliard, Kuramoto-Sivashinsky).  Particles interact through the
empirical mean of a pairwise kernel and carry independent finite-mode
noise.  Time stepping is IMEX: the dissipative linear operator is solved
implicitly (a per-mode division), everything else is explicit.

Every step has two phases.  Shared statistics (ensemble mean, clipped
norms) are reduced first in stream-id order; particle updates then depend
only on those statistics and their own noise stream, so relabelling
particles together with their streams permutes outputs exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.fft as sfft

from . import rng
from .ensemble import ParticleEnsemble, PathEnsemble, ordered_sum
from .errors import BlowUpError, ConfigurationError, DimensionError
from .spectral import (
    SpectralGrid,
    _advect_coeffs,
    burgers_coeffs,
    check_phi,
    leray_coeffs,
    phi_coeffs,
    random_scalar_coeffs,
    random_velocity_coeffs,
)

EQUATIONS = ("navier_stokes_2d", "cahn_hilliard", "kuramoto_sivashinsky")
KERNELS = ("stokes_drag", "linear_custom", "zero")


@dataclass(frozen=True)
class InteractionKernel:
    """Pairwise drift ``K(u, v)`` and noise amplitude ``sigma(u, v)``.

    * ``stokes_drag``: ``K(u, v) = u - v``.
    * ``linear_custom``: ``K(u, v) = a u + b v`` with ``coeffs = (a, b)``.
    * ``zero``: no drift and no noise.

    The noise map is diagonal in Fourier space with per-particle amplitude
    ``alpha (1 + min(|u|, R) + min(|v|, R))`` times the noise model's
    ``c_k``; clipping at ``radius`` R makes it globally Lipschitz.
    """

    kind: str = "stokes_drag"
    alpha: float = 0.1
    radius: float = 10.0
    coeffs: tuple[float, float] = (1.0, -1.0)

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ConfigurationError(f"kernel kind must be one of {KERNELS}")
        if self.alpha < 0 or not self.radius > 0:
            raise ConfigurationError("alpha must be >= 0 and radius > 0")

    @property
    def drift_coeffs(self) -> tuple[float, float]:
        if self.kind == "stokes_drag":
            return 1.0, -1.0
        if self.kind == "zero":
            return 0.0, 0.0
        return float(self.coeffs[0]), float(self.coeffs[1])

    @property
    def lipschitz(self) -> float:
        """Declared constant in ``|K(u,v)| <= C (|u| + |v|)``."""
        a, b = self.drift_coeffs
        return max(abs(a), abs(b))

    @property
    def noise_alpha(self) -> float:
        return 0.0 if self.kind == "zero" else float(self.alpha)

    def drift(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        a, b = self.drift_coeffs
        if self.kind == "stokes_drag":
            return u - v
        return a * u + b * v

    def clip(self, norms: np.ndarray) -> np.ndarray:
        return np.minimum(norms, self.radius)

    def noise_amplitude(self, norm_u, norm_v) -> np.ndarray:
        """Scalar multiplier of ``c_k`` for the pair (u, v)."""
        return self.noise_alpha * (1.0 + self.clip(norm_u) + self.clip(norm_v))


@dataclass(frozen=True)
class NoiseModel:
    """Finite-mode noise with ``c_k = c0 / (1 + |k|^2)`` on ``|k|_inf <= modes``.

    ``modes=None`` retains every mode of the field grid.
    """

    modes: int | None = None
    c0: float = 1.0
    seed: int = 0
    zero_mean_mode: bool = True

    def __post_init__(self):
        if self.modes is not None and self.modes < 0:
            raise ConfigurationError("noise modes must be >= 0")
        if self.c0 < 0:
            raise ConfigurationError("c0 must be >= 0")

    def amplitudes(self, grid: SpectralGrid) -> np.ndarray:
        c = self.c0 / (1.0 + grid.ksq)
        if self.modes is not None:
            kmax = np.max(np.abs(np.stack(grid.kint)), axis=0)
            c = np.where(kmax <= self.modes, c, 0.0)
        if self.zero_mean_mode:
            c = c.copy()
            c[grid.zero_index] = 0.0
        return c

    def hs_sq(self, grid: SpectralGrid, order: float = 0, velocity: bool = True) -> float:
        """Squared Hilbert-Schmidt norm of the unit-amplitude noise into order ``order``."""
        c = self.amplitudes(grid)
        w = grid.ksq ** order if order else np.ones(grid.shape)
        if velocity:
            c = c.copy()
            c[grid.zero_index] = 0.0
        return float(np.sum(c * c * w))


@dataclass(frozen=True)
class SpdeModelSpec:
    equation: str = "navier_stokes_2d"
    modes: int = 32
    dim: int = 2
    domain_size: float = 2.0 * np.pi
    viscosity: float = 1.0
    phi: tuple[float, ...] = (0.0, -1.0, 0.0, 1.0)
    kernel: InteractionKernel = field(default_factory=InteractionKernel)
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigurationError(f"equation must be one of {EQUATIONS}")
        if self.equation == "navier_stokes_2d":
            if self.dim != 2:
                raise ConfigurationError("Navier-Stokes runs in 2D")
            if not self.viscosity > 0:
                raise ConfigurationError("viscosity must be positive")
        else:
            if self.equation == "kuramoto_sivashinsky" and self.dim != 1:
                raise ConfigurationError("Kuramoto-Sivashinsky runs in 1D")
            check_phi(self.phi, self.dim)
        self.grid  # validates modes / domain

    @property
    def grid(self) -> SpectralGrid:
        return SpectralGrid(self.modes, self.dim, self.domain_size)

    @property
    def kind(self) -> str:
        return "velocity" if self.equation == "navier_stokes_2d" else "scalar"

    def with_modes(self, modes: int) -> "SpdeModelSpec":
        from dataclasses import replace
        return replace(self, modes=modes)


# ---------------------------------------------------------------------------
# shared statistics and interaction


def mean_field_drift(state, ensemble: ParticleEnsemble, kernel: InteractionKernel,
                     t: float = 0.0, naive: bool = False) -> np.ndarray:
    """``(1/N) sum_j K(state, X_j)`` for one state or a batch of states.

    Kernels are affine in each argument, so the mean is taken once; the
    ``naive`` path sums all N kernel evaluations instead.
    """
    state = np.asarray(getattr(state, "coeffs", state))
    if state.shape[-len(ensemble.state_shape):] != ensemble.state_shape:
        raise DimensionError("state does not match the ensemble grid")
    if naive:
        acc = np.zeros(np.broadcast_shapes(state.shape, ensemble.state_shape), dtype=ensemble.states.dtype)
        for j in ensemble.order:
            acc = acc + kernel.drift(state, ensemble.states[j])
        return acc / ensemble.N
    return kernel.drift(state, ensemble.mean())


def noise_amplitudes(ens: ParticleEnsemble, kernel: InteractionKernel) -> np.ndarray:
    """Per-particle ``(1/N) sum_j sigma(X_i, X_j)`` as a scalar multiplier of ``c_k``."""
    clipped = kernel.clip(np.sqrt(ens.norms_sq()))
    mean_clip = ordered_sum(clipped, ens.order) / ens.N
    return kernel.noise_alpha * (1.0 + clipped + mean_clip)


def unit_noise(grid: SpectralGrid, seed: int, step: int, stream_ids) -> np.ndarray:
    """Standard Gaussian mode increments (before the sqrt(dt) factor).

    Shape (N, *grid.shape); Hermitian per particle and keyed by wavenumber,
    so two grids sharing a mode draw the same value for it.
    """
    k = np.stack(grid.kint, axis=-1)
    code = rng.wavenumber_code(k)
    ids = np.asarray(stream_ids, dtype=np.int64).reshape((-1,) + (1,) * grid.dim)
    z = rng.normals(seed, step, ids, code[None], rng.TAG_NOISE)
    z = (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)
    flip = (slice(None),) + tuple(slice(None, None, -1) for _ in range(grid.dim))
    return (z + np.conj(z[flip])) / np.sqrt(2.0)


def velocity_directions(grid: SpectralGrid) -> np.ndarray:
    """``i k_perp / |k|`` per mode, shape (2, *shape); zero at k = 0."""
    k1, k2 = (k.astype(float) for k in grid.kint)
    kabs = np.sqrt(k1 * k1 + k2 * k2)
    kabs[grid.zero_index] = np.inf
    return np.stack([-1j * k2 / kabs, 1j * k1 / kabs])


def noise_term(ens: ParticleEnsemble, spec: SpdeModelSpec, dW: np.ndarray) -> np.ndarray:
    """``sigma_i dW_i`` in coefficient space for every particle."""
    grid = ens.grid
    amp = noise_amplitudes(ens, spec.kernel)
    ck = spec.noise.amplitudes(grid)
    base = (amp.reshape((-1,) + (1,) * grid.dim) * ck) * dW
    if ens.kind == "velocity":
        return base[:, None] * velocity_directions(grid)
    return base


def _check_finite(new: np.ndarray, ens: ParticleEnsemble, t: float):
    flat = new.reshape(len(new), -1)
    bad = ~np.all(np.isfinite(flat), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise BlowUpError(i, t, float(ens.norms_sq()[i]))


# ---------------------------------------------------------------------------
# steppers


def imex_step_nse(ensemble: ParticleEnsemble, spec: SpdeModelSpec, t: float, dt: float,
                  noise: np.ndarray | None = None, nonlinear: bool = True) -> ParticleEnsemble:
    """One IMEX step of the interacting Navier-Stokes system.

    ``noise`` holds the mode increments ``dW`` of shape (N, *grid.shape)
    (already scaled by sqrt(dt)); ``None`` means no noise this step.
    """
    if spec.equation != "navier_stokes_2d":
        raise ConfigurationError("imex_step_nse needs a Navier-Stokes spec")
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = ensemble.grid
    u = ensemble.states
    rhs = u.copy()
    if nonlinear:
        # unprojected advection: the single projection below covers every term
        rhs -= dt * _advect_coeffs(u, u, grid, True)
    if spec.kernel.kind != "zero":
        rhs += dt * mean_field_drift(u, ensemble, spec.kernel, t)
    if noise is not None and spec.kernel.noise_alpha > 0:
        rhs += noise_term(ensemble, spec, noise)
    new = leray_coeffs(rhs / (1.0 + dt * spec.viscosity * grid.ksq), grid)
    _check_finite(new, ensemble, t)
    return ensemble.replace(new)


def scalar_linear_symbol(spec: SpdeModelSpec, grid: SpectralGrid) -> np.ndarray:
    """Symbol of the implicitly treated fourth-order operator (|k|^4)."""
    return grid.ksq ** 2


def scalar_explicit_coeffs(u: np.ndarray, spec: SpdeModelSpec, grid: SpectralGrid) -> np.ndarray:
    """Explicit deterministic terms: ``lap phi(u)`` (plus ``-u u_x`` for KS)."""
    out = -grid.ksq * phi_coeffs(u, grid, spec.phi)
    if spec.equation == "kuramoto_sivashinsky":
        out = out - burgers_coeffs(u, grid)
    return out


def imex_step_scalar(ensemble: ParticleEnsemble, spec: SpdeModelSpec, t: float, dt: float,
                     noise: np.ndarray | None = None) -> ParticleEnsemble:
    if spec.equation not in ("cahn_hilliard", "kuramoto_sivashinsky"):
        raise ConfigurationError("imex_step_scalar needs a Cahn-Hilliard or KS spec")
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = ensemble.grid
    u = ensemble.states
    rhs = u + dt * scalar_explicit_coeffs(u, spec, grid)
    if spec.kernel.kind != "zero":
        rhs = rhs + dt * mean_field_drift(u, ensemble, spec.kernel, t)
    if noise is not None and spec.kernel.noise_alpha > 0:
        rhs = rhs + noise_term(ensemble, spec, noise)
    new = rhs / (1.0 + dt * scalar_linear_symbol(spec, grid))
    _check_finite(new, ensemble, t)
    return ensemble.replace(new)


def step(ensemble: ParticleEnsemble, spec: SpdeModelSpec, t: float, dt: float,
         noise: np.ndarray | None = None) -> ParticleEnsemble:
    if spec.equation == "navier_stokes_2d":
        return imex_step_nse(ensemble, spec, t, dt, noise)
    return imex_step_scalar(ensemble, spec, t, dt, noise)


# ---------------------------------------------------------------------------
# initial data and driver


def initial_ensemble(spec: SpdeModelSpec, N: int, seed: int, energy: float | None = 1.0,
                     decay: float | None = None, stream_ids=None) -> ParticleEnsemble:
    """i.i.d. random low-mode fields, one per stream id.

    Velocity fields have amplitude ``|k|^-3`` (divergence-free), scalar fields
    ``|k|^-2`` with zero mean; ``energy`` fixes each particle's squared L2 norm.
    """
    grid = spec.grid
    ids = np.arange(N) if stream_ids is None else np.asarray(stream_ids)
    if spec.kind == "velocity":
        d = 3.0 if decay is None else decay
        states = [random_velocity_coeffs(grid, seed, d, stream=int(i), energy=energy) for i in ids]
    else:
        d = 2.0 if decay is None else decay
        states = [random_scalar_coeffs(grid, seed, d, stream=int(i), energy=energy) for i in ids]
    return ParticleEnsemble(np.stack(states), spec.kind, grid, ids)


def stopping_time_tau(path: PathEnsemble, M: float, particle: int = 0) -> float:
    """First grid time at which the running integral of ``|X|_1^2`` or ``|X|^2`` exceeds M.

    Returns the final time if neither threshold is crossed.
    """
    energy = np.asarray(path.diagnostics["energy"])[:, particle]
    diss = np.asarray(path.diagnostics["dissipation"])[:, particle]
    hit = np.nonzero((diss > M) | (energy > M))[0]
    return float(path.times[hit[0]]) if len(hit) else path.T


@dataclass
class StoppingRule:
    """Stop the run at the first save time where particle ``particle`` exceeds M."""

    M: float
    particle: int = 0


def simulate_system(spec: SpdeModelSpec, N: int, initial, T: float, dt: float,
                    save_stride: int = 1, seed: int | None = None, stream_ids=None,
                    stopping: StoppingRule | None = None, threads: int = 1,
                    noise: bool = True) -> PathEnsemble:
    """Run the N-particle system on ``[0, T]``.

    ``initial`` is a ParticleEnsemble or a callable ``(spec, N, seed,
    stream_ids) -> ParticleEnsemble``.  Diagnostics recorded per saved time
    and particle: ``energy`` (squared L2 norm), ``enstrophy`` (squared order-1
    norm) and ``dissipation`` (running trapezoidal integral of ``enstrophy``
    over every step, not only saved ones).  ``threads`` sets the FFT worker
    count; results do not depend on it.
    """
    if not T > 0 or not dt > 0 or N < 1:
        raise ConfigurationError("need T > 0, dt > 0 and N >= 1")
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError("T must be a positive multiple of dt")
    seed = spec.noise.seed if seed is None else int(seed)
    if isinstance(initial, ParticleEnsemble):
        ens = initial
    else:
        ids = np.arange(N) if stream_ids is None else np.asarray(stream_ids)
        ens = initial(spec, N, seed, ids)
    if ens.N != N or ens.kind != spec.kind:
        raise DimensionError("initial ensemble does not match the model grid or kind")
    spec.grid.check_same(ens.grid)
    grid = spec.grid
    use_noise = noise and spec.kernel.noise_alpha > 0 and spec.noise.c0 > 0

    def diag(e: ParticleEnsemble):
        return e.norms_sq(0), e.norms_sq(1)

    times, saved = [0.0], [ens.states.copy()]
    en, ens1 = diag(ens)
    energies, enstrophies, running = [en], [ens1], np.zeros(N)
    dissipation = [running.copy()]
    max_energy = float(en.max())
    stopped_at = None
    if stopping is not None and en[stopping.particle] > stopping.M:
        steps = 0
        stopped_at = 0.0
    with sfft.set_workers(max(1, int(threads))):
        for m in range(steps):
            t = m * dt
            dW = np.sqrt(dt) * unit_noise(grid, seed, m, ens.stream_ids) if use_noise else None
            try:
                ens = step(ens, spec, t, dt, dW)
            except BlowUpError as err:
                err.partial = _path(times, saved, ens, spec, energies, enstrophies, dissipation,
                                    {"seed": seed, "dt": dt, "blowup_time": err.time})
                raise
            new_en, new_ens1 = diag(ens)
            running = running + 0.5 * dt * (ens1 + new_ens1)
            ens1 = new_ens1
            max_energy = max(max_energy, float(new_en.max()))
            if (m + 1) % save_stride == 0 or m + 1 == steps:
                times.append((m + 1) * dt)
                saved.append(ens.states.copy())
                energies.append(new_en)
                enstrophies.append(new_ens1)
                dissipation.append(running.copy())
                if stopping is not None:
                    p = stopping.particle
                    if running[p] > stopping.M or new_en[p] > stopping.M:
                        stopped_at = (m + 1) * dt
                        break
    meta = {"seed": seed, "dt": dt, "equation": spec.equation, "modes": spec.modes,
            "N": N, "max_energy": max_energy}
    if stopped_at is not None:
        meta["stopped_at"] = stopped_at
    return _path(times, saved, ens, spec, energies, enstrophies, dissipation, meta)


def _path(times, saved, ens, spec, energies, enstrophies, dissipation, meta) -> PathEnsemble:
    return PathEnsemble(np.array(times), np.array(saved), spec.kind, spec.grid, ens.stream_ids,
                        meta, {"energy": np.array(energies), "enstrophy": np.array(enstrophies),
                               "dissipation": np.array(dissipation)})


def default_initial(energy: float | None = 1.0, decay: float | None = None) -> Callable:
    def sampler(spec, N, seed, stream_ids):
        return initial_ensemble(spec, N, seed, energy, decay, stream_ids)
    return sampler
