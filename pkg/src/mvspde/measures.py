"""Exact Wasserstein-2 distances between equal-size empirical measures.

For two uniform measures on N atoms each, the optimal coupling can be taken
to be a permutation, so W2 reduces to a linear assignment problem on the
matrix of squared distances.  States can be compared at one time or as
paths under the discretised sup norm ``max_t ||x_t - y_t||``.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rng
from .ensemble import ParticleEnsemble, PathEnsemble
from .errors import DimensionError

METRICS = ("state_L2_at_time", "path_sup_L2")


def _flat_real(x: np.ndarray) -> np.ndarray:
    """(..., N, *state) -> (..., N, D) real, so complex modes count both parts."""
    x = np.ascontiguousarray(x)
    if np.iscomplexobj(x):
        x = x.view(np.float64) if x.dtype == np.complex128 else x.astype(np.complex128).view(np.float64)
    return x


def _sq_dist(a: np.ndarray, b: np.ndarray, chunk_bytes: int = 1 << 26) -> np.ndarray:
    """Squared distances between rows of ``a`` (T, Na, D) and ``b`` (T, Nb, D).

    Differences are formed directly (no Gram expansion) and summed with
    numpy's pairwise summation over the contiguous last axis.
    Returns (T, Na, Nb).
    """
    T, na, D = a.shape
    nb = b.shape[1]
    out = np.empty((T, na, nb))
    rows = max(1, chunk_bytes // max(1, 8 * D * nb * T))
    for i in range(0, na, rows):
        d = a[:, i:i + rows, None, :] - b[:, None, :, :]
        out[:, i:i + rows, :] = np.sum(d * d, axis=-1)
    return out


def _states_of(x, time_index):
    if isinstance(x, PathEnsemble):
        if time_index is None:
            return x.states
        return x.states[time_index][None]
    if isinstance(x, ParticleEnsemble):
        return x.states[None]
    raise TypeError("expected a ParticleEnsemble or PathEnsemble")


def _state_shape(x) -> tuple[int, ...]:
    return x.states.shape[2:] if isinstance(x, PathEnsemble) else x.states.shape[1:]


def pairwise_cost(a, b, metric: str = "path_sup_L2", time_index: int | None = None) -> np.ndarray:
    """N x N matrix of squared distances between the atoms of ``a`` and ``b``.

    ``state_L2_at_time`` compares snapshots (``time_index`` selects the grid
    time for path ensembles, default the final one); ``path_sup_L2`` takes
    the max over the shared time grid of the squared state distance.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    if type(a) is not type(b):
        raise DimensionError("cannot compare a path ensemble with a snapshot")
    if a.kind != b.kind or a.grid != b.grid or _state_shape(a) != _state_shape(b):
        raise DimensionError("ensembles live on different state spaces")
    if a.N != b.N:
        raise DimensionError("only equal-size ensembles are supported")
    if isinstance(a, PathEnsemble):
        if not a.compatible(b):
            raise DimensionError("path ensembles on different time grids")
        if metric == "state_L2_at_time" and time_index is None:
            time_index = -1
        if metric == "path_sup_L2":
            time_index = None
    xa, xb = _states_of(a, time_index), _states_of(b, time_index)
    T, N = xa.shape[:2]
    fa = _flat_real(xa).reshape(T, N, -1)
    fb = _flat_real(xb).reshape(T, N, -1)
    return _sq_dist(fa, fb).max(axis=0)


def optimal_assignment(cost) -> np.ndarray:
    """Column assigned to each row by an exact linear assignment solve."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError("cost matrix must be square")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


def wasserstein2_sq(cost) -> float:
    """Squared W2 between uniform N-atom measures from their squared-distance matrix."""
    cost = np.asarray(cost, dtype=float)
    perm = optimal_assignment(cost)
    n = len(perm)
    return max(float(np.sum(cost[np.arange(n), perm]) / n), 0.0)


def wasserstein2(cost) -> float:
    return float(np.sqrt(wasserstein2_sq(cost)))


def subsample_indices(n: int, k: int, seed: int, stream: int, draw: int = 0) -> np.ndarray:
    """``k`` of ``range(n)`` without replacement, from a counter-based permutation."""
    if k > n or k < 1:
        raise ValueError(f"cannot draw {k} of {n} particles")
    u = rng.uniforms(seed, draw, stream, np.arange(n), rng.TAG_SUBSAMPLE)[..., 0]
    return np.sort(np.argsort(u, kind="stable")[:k])


def chaos_statistic(system_paths: PathEnsemble, reference_paths: PathEnsemble,
                    subsample: int, seed: int = 0, draw: int = 0) -> float:
    """Squared path-space W2 between ``subsample`` system and reference particles.

    Each side is subsampled without replacement from its own stream; when
    ``subsample`` equals the ensemble size the whole ensemble is used.
    """
    if subsample > system_paths.N or subsample > reference_paths.N:
        raise ValueError("subsample exceeds an ensemble size")
    ia = subsample_indices(system_paths.N, subsample, seed, 0, draw)
    ib = subsample_indices(reference_paths.N, subsample, seed, 1, draw)
    a = system_paths if subsample == system_paths.N else system_paths.select(ia)
    b = reference_paths if subsample == reference_paths.N else reference_paths.select(ib)
    return wasserstein2_sq(pairwise_cost(a, b, "path_sup_L2"))
