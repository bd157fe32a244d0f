"""Counter-based random numbers for reproducible particle noise.

Every Gaussian draw is a pure function of ``(key, counter)``: the key comes
from the master seed, the counter words encode (time step, stream id,
block index, tag).  Nothing depends on call order or thread scheduling, so
a particle's noise is fixed by its stream id alone.

The block cipher is Philox4x32-10 (Salmon et al., Random123), vectorised
with numpy.  Uniforms use 53 bits from two 32-bit words; normals use the
Box-Muller transform on pairs of uniforms.
"""
from __future__ import annotations

import hashlib

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

# counter word 3 tags, so independent uses never share a counter
TAG_NOISE = 1
TAG_INIT = 2
TAG_SUBSAMPLE = 3
TAG_PERTURB = 4


def philox4x32(counter, key, rounds: int = 10) -> np.ndarray:
    """Apply Philox4x32 to broadcastable counter words.

    ``counter`` has shape (..., 4) of integers < 2**32; ``key`` is a pair.
    Returns uint32 array of shape (..., 4).
    """
    ctr = np.asarray(counter, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def derive_seed(master: int, *labels) -> int:
    """Documented 64-bit seed schedule: first 8 bytes of SHA-256.

    ``derive_seed(master, i)`` is the seed of replicate ``i``; labels are
    joined with ':' so any hashable-as-text label works.
    """
    text = ":".join(str(x) for x in (master, *labels))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def _key(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, step, stream, block, tag: int) -> np.ndarray:
    """Two uniforms in (0, 1] per counter; shape broadcast(...) + (2,)."""
    step, stream, block = np.broadcast_arrays(
        np.asarray(step, dtype=np.uint64),
        np.asarray(stream, dtype=np.uint64),
        np.asarray(block, dtype=np.uint64),
    )
    ctr = np.stack(
        [block, step, stream, np.full(block.shape, tag, dtype=np.uint64)], axis=-1
    )
    w = philox4x32(ctr, _key(seed)).astype(np.uint64)
    # 53-bit integers from word pairs: high 27 bits of one, 26 of the other
    a = ((w[..., 0] >> np.uint64(5)) << np.uint64(26)) | (w[..., 1] >> np.uint64(6))
    b = ((w[..., 2] >> np.uint64(5)) << np.uint64(26)) | (w[..., 3] >> np.uint64(6))
    scale = 2.0**-53
    return np.stack([(a.astype(np.float64) + 1.0) * scale,
                     (b.astype(np.float64) + 1.0) * scale], axis=-1)


def normals(seed: int, step, stream, block, tag: int = TAG_NOISE) -> np.ndarray:
    """Two independent N(0,1) draws per counter via Box-Muller."""
    u = uniforms(seed, step, stream, block, tag)
    r = np.sqrt(-2.0 * np.log(u[..., 0]))
    theta = 2.0 * np.pi * u[..., 1]
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def stream_normals(seed: int, step: int, streams, count: int,
                   tag: int = TAG_NOISE) -> np.ndarray:
    """``count`` normals for each stream id at one step, shape (len(streams), count)."""
    streams = np.asarray(streams, dtype=np.uint64)
    nblocks = (count + 1) // 2
    z = normals(seed, step, streams[:, None], np.arange(nblocks)[None, :], tag)
    return z.reshape(len(streams), 2 * nblocks)[:, :count]


def wavenumber_code(k: np.ndarray, offset: int = 1 << 12) -> np.ndarray:
    """Grid-independent block index for integer wavenumbers (last axis = components).

    Noise and initial data keyed by this code agree on shared modes across
    different truncation levels.
    """
    k = np.asarray(k, dtype=np.int64) + offset
    code = np.zeros(k.shape[:-1], dtype=np.int64)
    for j in range(k.shape[-1]):
        code = code * (2 * offset) + k[..., j]
    return code
