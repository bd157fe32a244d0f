"""Binary ensemble snapshots.

Layout (all little-endian)::

    magic     8 bytes  b"MVSPDE\\x00\\x01"
    version   uint32   1
    equation  uint32   0 vector, 1 navier_stokes_2d, 2 cahn_hilliard, 3 kuramoto_sivashinsky
    dim       uint32   spatial dimension (vector: state dimension)
    M         uint32   retained modes per axis (vector: 0)
    N         uint64   particle count
    L         float64  torus side (vector: 0)
    dt        float64
    t         float64
    ids       N x int64 stream ids
    data      N x prod(state_shape) complex128, row-major per particle

Vector states are stored with zero imaginary parts.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .ensemble import ParticleEnsemble
from .errors import ConfigurationError
from .spectral import SpectralGrid

MAGIC = b"MVSPDE\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQddd")
EQUATION_TAGS = {"vector": 0, "navier_stokes_2d": 1, "cahn_hilliard": 2, "kuramoto_sivashinsky": 3}


def _equation_for(ens: ParticleEnsemble, equation: str | None) -> str:
    if ens.kind == "vector":
        return "vector"
    if ens.kind == "velocity":
        return "navier_stokes_2d"
    if equation not in ("cahn_hilliard", "kuramoto_sivashinsky"):
        raise ConfigurationError("scalar snapshots need the equation name")
    return equation


def encode(ens: ParticleEnsemble, t: float = 0.0, dt: float = 0.0, equation: str | None = None) -> bytes:
    eq = _equation_for(ens, equation)
    if eq == "vector":
        dim, modes, size = ens.states.shape[1], 0, 0.0
    else:
        dim, modes, size = ens.grid.dim, ens.grid.modes, ens.grid.domain_size
    head = _HEADER.pack(MAGIC, VERSION, EQUATION_TAGS[eq], dim, modes, ens.N, size, dt, t)
    ids = ens.stream_ids.astype("<i8").tobytes()
    data = np.ascontiguousarray(ens.states, dtype=np.complex128).astype("<c16").tobytes()
    return head + ids + data


def decode(buf: bytes) -> tuple[ParticleEnsemble, dict]:
    if len(buf) < _HEADER.size:
        raise ConfigurationError("truncated snapshot")
    magic, version, tag, dim, modes, n, size, dt, t = _HEADER.unpack_from(buf)
    if magic != MAGIC or version != VERSION:
        raise ConfigurationError("not a snapshot file of a supported version")
    eq = {v: k for k, v in EQUATION_TAGS.items()}.get(tag)
    if eq is None:
        raise ConfigurationError(f"unknown equation tag {tag}")
    try:
        return _decode_body(buf, eq, dim, modes, n, size, dt, t)
    except ValueError as err:
        raise ConfigurationError(f"corrupt snapshot: {err}") from err


def _decode_body(buf, eq, dim, modes, n, size, dt, t):
    off = _HEADER.size
    ids = np.frombuffer(buf, "<i8", n, off).astype(np.int64)
    off += 8 * n
    if eq == "vector":
        data = np.frombuffer(buf, "<c16", n * dim, off).reshape(n, dim).real.astype(float)
        ens = ParticleEnsemble(data, "vector", stream_ids=ids)
    else:
        grid = SpectralGrid(modes, dim, size)
        shape = ((2,) if eq == "navier_stokes_2d" else ()) + grid.shape
        count = n * int(np.prod(shape))
        data = np.frombuffer(buf, "<c16", count, off).reshape((n,) + shape).astype(np.complex128)
        kind = "velocity" if eq == "navier_stokes_2d" else "scalar"
        ens = ParticleEnsemble(data, kind, grid, ids)
    return ens, {"equation": eq, "t": t, "dt": dt}


def write(path, ens: ParticleEnsemble, t: float = 0.0, dt: float = 0.0, equation: str | None = None):
    Path(path).write_bytes(encode(ens, t, dt, equation))


def read(path) -> tuple[ParticleEnsemble, dict]:
    return decode(Path(path).read_bytes())
