"""Particle ensembles at one instant and on a time grid.

States are stored batched: ``states[i]`` is particle ``i`` (a vector in
R^d, or the coefficient array of a velocity / scalar field).  Ensemble-wide
reductions run in stream-id order, so relabelling particles together with
their noise streams permutes every output exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .spectral import SpectralGrid, VelocityField, ScalarField, norm_sq_coeffs

KINDS = ("vector", "velocity", "scalar")


def state_norm_sq(states: np.ndarray, kind: str, grid: SpectralGrid | None = None,
                  order: float = 0) -> np.ndarray:
    """Squared state norm over the trailing state axes (H = L2 for fields)."""
    if kind == "vector":
        if order != 0:
            raise ValueError("Sobolev orders apply to field states only")
        return np.sum(states * states, axis=-1)
    return norm_sq_coeffs(states, grid, order, component_axis=(kind == "velocity"))


def state_ndim(kind: str, grid: SpectralGrid | None) -> int:
    if kind == "vector":
        return 1
    return grid.dim + (1 if kind == "velocity" else 0)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """N homogeneous particle states with uniform weights 1/N."""

    states: np.ndarray = field(repr=False)
    kind: str = "vector"
    grid: SpectralGrid | None = None
    stream_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind != "vector" and self.grid is None:
            raise DimensionError("field ensembles need a grid")
        states = np.asarray(self.states)
        if self.kind == "vector" and states.ndim == 1:
            states = states[:, None]
        nd = state_ndim(self.kind, self.grid)
        if states.ndim != nd + 1 or len(states) < 1:
            raise DimensionError("states must be (N, *state_shape) with N >= 1")
        if self.kind == "velocity" and states.shape[1:] != (2,) + self.grid.shape:
            raise DimensionError("velocity states do not match the grid")
        if self.kind == "scalar" and states.shape[1:] != self.grid.shape:
            raise DimensionError("scalar states do not match the grid")
        ids = np.arange(len(states)) if self.stream_ids is None else np.asarray(self.stream_ids)
        if ids.shape != (len(states),):
            raise DimensionError("one stream id per particle")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "stream_ids", ids.astype(np.int64))

    @property
    def N(self) -> int:
        return len(self.states)

    @property
    def state_shape(self) -> tuple[int, ...]:
        return self.states.shape[1:]

    @property
    def order(self) -> np.ndarray:
        """Canonical (stream-id) order used for every reduction."""
        return np.argsort(self.stream_ids, kind="stable")

    def mean(self) -> np.ndarray:
        return ordered_sum(self.states, self.order) / self.N

    def norms_sq(self, order: float = 0) -> np.ndarray:
        return state_norm_sq(self.states, self.kind, self.grid, order)

    def second_moment(self) -> float:
        return float(ordered_sum(self.norms_sq(), self.order) / self.N)

    def replace(self, states: np.ndarray) -> "ParticleEnsemble":
        return ParticleEnsemble(states, self.kind, self.grid, self.stream_ids)

    def permuted(self, perm) -> "ParticleEnsemble":
        perm = np.asarray(perm)
        return ParticleEnsemble(self.states[perm], self.kind, self.grid, self.stream_ids[perm])

    def field(self, i: int):
        if self.kind == "velocity":
            return VelocityField(self.grid, self.states[i])
        if self.kind == "scalar":
            return ScalarField(self.grid, self.states[i])
        return self.states[i].copy()

    @classmethod
    def from_fields(cls, fields, stream_ids=None) -> "ParticleEnsemble":
        fields = list(fields)
        f0 = fields[0]
        kind = "velocity" if isinstance(f0, VelocityField) else "scalar"
        for f in fields[1:]:
            f0.grid.check_same(f.grid)
        return cls(np.stack([f.coeffs for f in fields]), kind, f0.grid, stream_ids)


def ordered_sum(x: np.ndarray, order: np.ndarray) -> np.ndarray:
    """Sum over axis 0 in a fixed sequential order."""
    acc = np.array(x[order[0]], dtype=x.dtype, copy=True)
    for i in order[1:]:
        acc += x[i]
    return acc


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Trajectories of N particles on a strictly increasing time grid.

    ``states`` has shape ``(len(times), N, *state_shape)``.  ``diagnostics``
    holds per-(time, particle) streams such as ``"energy"`` (squared L2
    norm), ``"enstrophy"`` (squared order-1 norm) and ``"dissipation"``
    (running integral of the order-1 norm squared).
    """

    times: np.ndarray
    states: np.ndarray = field(repr=False)
    kind: str = "vector"
    grid: SpectralGrid | None = None
    stream_ids: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) < 1:
            raise DimensionError("time grid must be a nonempty 1D array")
        if np.any(np.diff(times) <= 0):
            raise DimensionError("time grid must be strictly increasing")
        states = np.asarray(self.states)
        if self.kind == "vector" and states.ndim == 2:
            states = states[..., None]
        if states.shape[0] != len(times):
            raise DimensionError("states and time grid disagree")
        ids = np.arange(states.shape[1]) if self.stream_ids is None else np.asarray(self.stream_ids)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "stream_ids", ids.astype(np.int64))

    @property
    def N(self) -> int:
        return self.states.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def at(self, i: int) -> ParticleEnsemble:
        return ParticleEnsemble(self.states[i], self.kind, self.grid, self.stream_ids)

    def norms_sq(self, order: float = 0) -> np.ndarray:
        """Squared state norms, shape (len(times), N)."""
        return state_norm_sq(self.states, self.kind, self.grid, order)

    def select(self, idx) -> "PathEnsemble":
        """Sub-ensemble of particles ``idx`` (diagnostics sliced alike)."""
        idx = np.asarray(idx)
        diag = {k: v[:, idx] for k, v in self.diagnostics.items()
                if isinstance(v, np.ndarray) and v.ndim == 2 and v.shape[1] == self.N}
        return PathEnsemble(self.times, self.states[:, idx], self.kind, self.grid,
                            self.stream_ids[idx], dict(self.metadata), diag)

    def compatible(self, other: "PathEnsemble") -> bool:
        return (self.kind == other.kind and self.grid == other.grid
                and self.states.shape[2:] == other.states.shape[2:]
                and len(self.times) == len(other.times)
                and np.allclose(self.times, other.times, rtol=0, atol=1e-12))
