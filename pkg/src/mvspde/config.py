"""Experiment configuration: strict TOML schema with environment overrides.

Unknown keys are rejected at every level.  Example::

    schema_version = 1
    kind = "chaos"
    T = 0.5
    dt = 0.01
    save_stride = 5
    N_schedule = [4, 16, 64]
    N_ref = 256

    [seeds]
    count = 20
    master = 7

    [model]
    family = "spde"
    equation = "navier_stokes_2d"
    modes = 32
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path
from typing import Literal

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .particles import InteractionKernel, NoiseModel, SpdeModelSpec

SCHEMA_VERSION = 1
ENV_PREFIX = "MVSPDE_"
KINDS = ("simulate", "chaos", "galerkin", "stability", "audit")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class KernelConfig(Strict):
    kind: Literal["stokes_drag", "linear_custom", "zero"] = "stokes_drag"
    alpha: float = Field(0.1, ge=0)
    radius: float = Field(10.0, gt=0)
    coeffs: tuple[float, float] = (1.0, -1.0)


class NoiseConfig(Strict):
    modes: int | None = Field(None, ge=0)
    c0: float = Field(1.0, ge=0)
    zero_mean_mode: bool = True


class InitialConfig(Strict):
    energy: float | None = Field(1.0, gt=0)
    decay: float | None = None
    smooth_rate: float | None = Field(None, gt=0)
    mean: float = 1.0
    std: float = Field(1.0, ge=0)


class ModelConfig(Strict):
    family: Literal["spde", "mvsde"] = "spde"
    # field models
    equation: Literal["navier_stokes_2d", "cahn_hilliard", "kuramoto_sivashinsky"] = "navier_stokes_2d"
    modes: int = Field(32, ge=1)
    dim: int = Field(2, ge=1, le=2)
    domain_size: float = Field(2.0 * math.pi, gt=0)
    viscosity: float = Field(1.0, gt=0)
    phi: tuple[float, ...] = (0.0, -1.0, 0.0, 1.0)
    kernel: KernelConfig = KernelConfig()
    noise: NoiseConfig = NoiseConfig()
    initial: InitialConfig = InitialConfig()
    broken_sigma: bool = False
    # finite-dimensional models
    sde: Literal["mean_field_ou", "double_well", "mean_field_multiplicative"] = "mean_field_ou"
    a: float = -1.0
    beta: float = 0.5
    s: float = Field(1.0, ge=0)
    state_dim: int = Field(1, ge=1)
    cutoff: float | None = Field(None, gt=0)

    def spde_spec(self, seed: int = 0, modes: int | None = None) -> SpdeModelSpec:
        try:
            return SpdeModelSpec(
                equation=self.equation, modes=modes or self.modes, dim=self.dim,
                domain_size=self.domain_size, viscosity=self.viscosity, phi=tuple(self.phi),
                kernel=InteractionKernel(self.kernel.kind, self.kernel.alpha, self.kernel.radius,
                                         tuple(self.kernel.coeffs)),
                noise=NoiseModel(self.noise.modes, self.noise.c0, seed, self.noise.zero_mean_mode))
        except (ConfigurationError, ValueError) as err:
            raise ConfigurationError(str(err)) from err


class SeedConfig(Strict):
    count: int = Field(1, ge=1)
    master: int = Field(0, ge=0)


class GalerkinConfig(Strict):
    modes: list[int] = [8, 16, 32, 64]
    noise_modes: int = Field(8, ge=0)

    @field_validator("modes")
    @classmethod
    def _increasing(cls, v):
        if len(v) < 2 or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("mode schedule must be strictly increasing with at least two entries")
        return v


class StabilityConfig(Strict):
    eps: list[float] = [1e-3, 5e-4]


class AuditConfig(Strict):
    samples: int = Field(500, ge=1)


class OutputConfig(Strict):
    dir: str = "results"
    snapshots: bool = False


class ExperimentConfig(Strict):
    schema_version: int = SCHEMA_VERSION
    kind: Literal["simulate", "chaos", "galerkin", "stability", "audit"]
    T: float = Field(1.0, gt=0)
    dt: float = Field(0.01, gt=0)
    save_stride: int = Field(1, ge=1)
    N: int = Field(4, ge=1)
    N_schedule: list[int] = [16, 64, 256]
    N_ref: int = Field(1024, ge=1)
    workers: int = Field(1, ge=1)
    model: ModelConfig = ModelConfig()
    seeds: SeedConfig = SeedConfig()
    galerkin: GalerkinConfig = GalerkinConfig()
    stability: StabilityConfig = StabilityConfig()
    audit: AuditConfig = AuditConfig()
    output: OutputConfig = OutputConfig()
    tolerances: dict[str, float] = {}

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v} (expected {SCHEMA_VERSION})")
        return v

    @field_validator("N_schedule")
    @classmethod
    def _schedule(cls, v):
        if not v or any(n < 1 for n in v) or any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("N_schedule must be strictly increasing positive integers")
        return v

    @model_validator(mode="after")
    def _grid(self):
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > math.ulp(self.T):
            raise ValueError("T must equal an integer number of dt steps (within 1 ulp)")
        if self.kind == "chaos" and max(self.N_schedule) > self.N_ref:
            raise ValueError("N_ref must be at least the largest N in the schedule")
        if self.model.family == "spde":
            self.model.spde_spec()
        return self

    @property
    def steps(self) -> int:
        return round(self.T / self.dt)

    def digest(self) -> str:
        """Content hash of the normalised config (excludes output location and workers)."""
        data = self.model_dump(mode="json", exclude={"output": {"dir"}, "workers": True})
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]


def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def env_overrides(environ=None) -> dict:
    """``MVSPDE_SEED``, ``MVSPDE_OUT``, ``MVSPDE_THREADS``, plus ``MVSPDE_SET__a__b=json`` keys."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    if ENV_PREFIX + "SEED" in environ:
        _set_path(out, "seeds.master", int(environ[ENV_PREFIX + "SEED"]))
    if ENV_PREFIX + "OUT" in environ:
        _set_path(out, "output.dir", environ[ENV_PREFIX + "OUT"])
    if ENV_PREFIX + "THREADS" in environ:
        out["workers"] = int(environ[ENV_PREFIX + "THREADS"])
    for key, val in environ.items():
        if key.startswith(ENV_PREFIX + "SET__"):
            path = key[len(ENV_PREFIX + "SET__"):].lower().replace("__", ".")
            try:
                parsed = json.loads(val)
            except json.JSONDecodeError:
                parsed = val
            _set_path(out, path, parsed)
    return out


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def parse_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(_merge(data, overrides or {}))
    except ValidationError as err:
        raise ConfigurationError(str(err)) from err


def load_config(path, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Read TOML, then apply environment overrides, then explicit ``overrides``."""
    try:
        data = tomli.loads(Path(path).read_text())
    except (OSError, tomli.TOMLDecodeError) as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    return parse_config(_merge(data, env_overrides(environ)), overrides)
