"""Fourier fields on the periodic torus and the operators acting on them.

Coefficients are taken against the orthonormal basis
``e_k(x) = L**(-d/2) exp(i 2*pi/L k.x)`` with integer ``k`` in the square
``{-M..M}**d``, stored centred: array index ``k + M``.  With this
normalisation Parseval has no volume factor, so every inner product and
Sobolev norm is a plain weighted sum over coefficients.

Quadratic products are evaluated on a padded physical grid of size at least
``3M+1`` (the 3/2 rule, equivalent to 2/3-rule truncation), so the retained
modes of a product of retained fields are alias-free.  A degree-``p``
polynomial needs ``(p+1)M+1`` points.

The array-level functions (``*_coeffs``) accept arbitrary leading batch axes
and are what the particle engine calls; the field classes wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from . import rng
from .errors import DimensionError, UnsupportedOperation, ConfigurationError

TWO_PI = 2.0 * np.pi


def _fast_even(n: int) -> int:
    m = sfft.next_fast_len(n, real=True)
    while m % 2:
        m = sfft.next_fast_len(m + 1, real=True)
    return m


@dataclass(frozen=True)
class SpectralGrid:
    """Truncation level ``modes`` (M), dimension and torus side length."""

    modes: int
    dim: int = 2
    domain_size: float = TWO_PI

    def __post_init__(self):
        if int(self.modes) < 1:
            raise ConfigurationError("modes must be a positive integer")
        if self.dim not in (1, 2):
            raise ConfigurationError("dim must be 1 or 2")
        if not self.domain_size > 0:
            raise ConfigurationError("domain_size must be positive")

    @property
    def side(self) -> int:
        return 2 * self.modes + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def scale(self) -> float:
        """Wavenumber scaling 2*pi/L."""
        return TWO_PI / self.domain_size

    @cached_property
    def kint(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumber components, each of shape ``self.shape``."""
        r = np.arange(-self.modes, self.modes + 1)
        return tuple(np.meshgrid(*([r] * self.dim), indexing="ij"))

    @cached_property
    def kvec(self) -> tuple[np.ndarray, ...]:
        return tuple(self.scale * k.astype(float) for k in self.kint)

    @cached_property
    def ksq(self) -> np.ndarray:
        """|k|^2 including the 2*pi/L scaling."""
        return sum(k * k for k in self.kvec)

    @property
    def zero_index(self) -> tuple[int, ...]:
        return (self.modes,) * self.dim

    @cached_property
    def dealias_size(self) -> int:
        return self.physical_size(2)

    def physical_size(self, degree: int) -> int:
        """Grid points per axis making degree-``degree`` products alias-free."""
        return _fast_even(max(degree, 1) * self.modes + self.modes + 1)

    @property
    def volume(self) -> float:
        return self.domain_size ** self.dim

    def check_same(self, other: "SpectralGrid"):
        if self != other:
            raise DimensionError(f"grid mismatch: {self} vs {other}")


# ---------------------------------------------------------------------------
# transforms


def to_physical(coeffs: np.ndarray, grid: SpectralGrid, n: int | None = None) -> np.ndarray:
    """Evaluate a (batch of) fields on the uniform ``n**dim`` grid."""
    n = grid.dealias_size if n is None else int(n)
    if n < grid.side:
        raise DimensionError("physical grid too coarse for the retained modes")
    M = grid.modes
    c = np.asarray(coeffs)
    lead = c.shape[: c.ndim - grid.dim]
    if grid.dim == 1:
        half = np.zeros(lead + (n // 2 + 1,), dtype=complex)
        half[..., : M + 1] = c[..., M:]
        return sfft.irfft(half, n=n, axis=-1) * (n / np.sqrt(grid.domain_size))
    half = np.zeros(lead + (n, n // 2 + 1), dtype=complex)
    rows = np.arange(-M, M + 1) % n
    half[..., rows, : M + 1] = c[..., :, M:]
    return sfft.irfft2(half, s=(n, n), axes=(-2, -1)) * (n * n / grid.domain_size)


def to_spectral(values: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Project physical samples onto the retained modes (reality enforced)."""
    M = grid.modes
    v = np.asarray(values, dtype=float)
    n = v.shape[-1]
    if grid.dim == 1:
        half = sfft.rfft(v, axis=-1)[..., : M + 1] * (np.sqrt(grid.domain_size) / n)
        out = np.empty(v.shape[:-1] + (grid.side,), dtype=complex)
        out[..., M:] = half
        out[..., :M] = np.conj(half[..., M:0:-1])
        out[..., M] = out[..., M].real
        return out
    F = sfft.rfft2(v, axes=(-2, -1))
    rows = np.arange(-M, M + 1) % n
    half = F[..., rows, : M + 1] * (grid.domain_size / (n * n))
    out = np.empty(v.shape[:-2] + grid.shape, dtype=complex)
    out[..., :, M:] = half
    out[..., :, :M] = np.conj(half[..., ::-1, M:0:-1])
    col = out[..., :, M]
    out[..., :, M] = 0.5 * (col + np.conj(col[..., ::-1]))
    return out


def physical_points(grid: SpectralGrid, n: int) -> tuple[np.ndarray, ...]:
    x = np.arange(n) * (grid.domain_size / n)
    return tuple(np.meshgrid(*([x] * grid.dim), indexing="ij"))


# ---------------------------------------------------------------------------
# Leray projection and velocity operators


def _quantize(x: np.ndarray, bits: int) -> np.ndarray:
    m, e = np.frexp(x)
    return np.ldexp(np.round(m * 2.0**bits) * 2.0**-bits, e)


def _quantize_complex(z: np.ndarray, bits: int) -> np.ndarray:
    return _quantize(z.real, bits) + 1j * _quantize(z.imag, bits)


@lru_cache(maxsize=64)
def _leray_bits(modes: int) -> np.ndarray:
    """Mantissa bits kept per mode: 53 minus the bit length of odd(|k1 k2|)."""
    k = np.arange(-modes, modes + 1, dtype=np.int64)
    q = np.abs(k[:, None] * k[None, :])
    low = q & -q
    odd = np.where(q > 0, q // np.where(low > 0, low, 1), 0)
    return 53 - np.frexp(odd.astype(float))[1]


def leray_coeffs(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Divergence-free part of vector coefficients ``(..., 2, *shape)``.

    Each mode is written as ``s * k_perp`` with ``k_perp = (-k2, k1)`` in
    integer wavenumbers, and ``s`` is rounded to few enough bits that
    ``k1 * k2 * s`` is exact; ``k . u`` then vanishes to the last bit.  The
    rounding depends only on the mode, never on the truncation level, and
    axis modes (``k1 k2 = 0``) are not rounded at all.  Modes whose
    divergence is already exactly zero are returned untouched, which makes
    the projection bit-idempotent.
    """
    if grid.dim != 2:
        raise UnsupportedOperation("Leray projection is defined for 2D fields")
    c = np.asarray(c, dtype=complex)
    k1, k2 = (k.astype(float) for k in grid.kint)
    u1, u2 = c[..., 0, :, :], c[..., 1, :, :]
    div = k1 * u1 + k2 * u2
    ksq = k1 * k1 + k2 * k2
    ksq[grid.zero_index] = 1.0
    s = _quantize_complex((k1 * u2 - k2 * u1) / ksq, _leray_bits(grid.modes))
    keep = div == 0
    out = np.empty_like(c)
    out[..., 0, :, :] = np.where(keep, u1, -k2 * s)
    out[..., 1, :, :] = np.where(keep, u2, k1 * s)
    out[..., :, grid.modes, grid.modes] = 0.0
    return out


def divergence_coeffs(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """``k . u`` per mode in integer wavenumbers (the exactness check)."""
    k1, k2 = (k.astype(float) for k in grid.kint)
    return k1 * c[..., 0, :, :] + k2 * c[..., 1, :, :]


def stokes_coeffs(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    return leray_coeffs(-grid.ksq * np.asarray(c), grid)


def _advect_coeffs(u: np.ndarray, v: np.ndarray, grid: SpectralGrid, same: bool) -> np.ndarray:
    """Unprojected ``(u . grad) v`` written as ``div(u (x) v)`` (u divergence-free)."""
    U = to_physical(u, grid)
    V = U if same else to_physical(v, grid)
    kx, ky = grid.kvec
    if same:
        prods = np.stack([U[..., 0, :, :] * U[..., 0, :, :],
                          U[..., 0, :, :] * U[..., 1, :, :],
                          U[..., 1, :, :] * U[..., 1, :, :]], axis=-3)
        P = to_spectral(prods, grid)
        p00, p01, p11 = P[..., 0, :, :], P[..., 1, :, :], P[..., 2, :, :]
        b0 = 1j * (kx * p00 + ky * p01)
        b1 = 1j * (kx * p01 + ky * p11)
    else:
        # component i of the result: sum_j d_j (u_j v_i)
        prods = np.stack([U[..., 0, :, :] * V[..., 0, :, :],
                          U[..., 1, :, :] * V[..., 0, :, :],
                          U[..., 0, :, :] * V[..., 1, :, :],
                          U[..., 1, :, :] * V[..., 1, :, :]], axis=-3)
        P = to_spectral(prods, grid)
        b0 = 1j * (kx * P[..., 0, :, :] + ky * P[..., 1, :, :])
        b1 = 1j * (kx * P[..., 2, :, :] + ky * P[..., 3, :, :])
    return np.stack([b0, b1], axis=-3)


def bilinear_coeffs(u: np.ndarray, v: np.ndarray | None, grid: SpectralGrid) -> np.ndarray:
    """Leray-projected, dealiased ``(u . grad) v``; ``v=None`` means ``B(u, u)``."""
    same = v is None or v is u
    return leray_coeffs(_advect_coeffs(u, u if same else v, grid, same), grid)


def sobolev_weights(grid: SpectralGrid, order: float) -> np.ndarray:
    """|k|^(2 order) per mode; the mean mode gets 0 for negative order."""
    if order == 0:
        return np.ones(grid.shape)
    ksq = grid.ksq.copy()
    if order < 0:
        ksq[grid.zero_index] = np.inf
        return ksq ** float(order)
    return ksq ** float(order)


def inner_coeffs(a: np.ndarray, b: np.ndarray, grid: SpectralGrid, order: float = 0,
                 component_axis: bool = False) -> np.ndarray:
    """Real pairing summed over modes (and components); batch axes preserved."""
    p = (a * np.conj(b)).real * sobolev_weights(grid, order)
    p = p.reshape(p.shape[: p.ndim - grid.dim] + (-1,)).sum(axis=-1)
    return p.sum(axis=-1) if component_axis else p


def norm_sq_coeffs(c: np.ndarray, grid: SpectralGrid, order: float = 0,
                   component_axis: bool = False) -> np.ndarray:
    """Squared Sobolev norm; with ``component_axis`` the axis before the modes is summed."""
    w = sobolev_weights(grid, order)
    e = (c.real ** 2 + c.imag ** 2) * w
    e = e.reshape(e.shape[: e.ndim - grid.dim] + (-1,)).sum(axis=-1)
    return e.sum(axis=-1) if component_axis else e


# ---------------------------------------------------------------------------
# field types


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Mean-free, divergence-free 2D velocity on the torus."""

    grid: SpectralGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.grid.dim != 2:
            raise DimensionError("velocity fields are two-dimensional")
        if self.coeffs.shape != (2,) + self.grid.shape:
            raise DimensionError(f"expected coefficients of shape {(2,) + self.grid.shape}")
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))

    @classmethod
    def zero(cls, grid: SpectralGrid) -> "VelocityField":
        return cls(grid, np.zeros((2,) + grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: SpectralGrid, values: np.ndarray) -> "VelocityField":
        """Project sampled ``(2, n, n)`` values (Leray projection applied)."""
        return cls(grid, leray_coeffs(to_spectral(values, grid), grid))

    @classmethod
    def random(cls, grid: SpectralGrid, seed: int, decay: float = 3.0,
               stream: int = 0, energy: float | None = None) -> "VelocityField":
        return cls(grid, random_velocity_coeffs(grid, seed, decay, stream, energy))

    def to_physical(self, n: int | None = None) -> np.ndarray:
        return to_physical(self.coeffs, self.grid, n)

    def __add__(self, other: "VelocityField") -> "VelocityField":
        self.grid.check_same(other.grid)
        return VelocityField(self.grid, leray_coeffs(self.coeffs + other.coeffs, self.grid))

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        self.grid.check_same(other.grid)
        return VelocityField(self.grid, leray_coeffs(self.coeffs - other.coeffs, self.grid))

    def scaled(self, a: float) -> "VelocityField":
        return VelocityField(self.grid, leray_coeffs(a * self.coeffs, self.grid))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real periodic scalar field in one or two dimensions."""

    grid: SpectralGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise DimensionError(f"expected coefficients of shape {self.grid.shape}")
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))

    @classmethod
    def zero(cls, grid: SpectralGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid: SpectralGrid, values: np.ndarray) -> "ScalarField":
        return cls(grid, to_spectral(values, grid))

    @classmethod
    def constant(cls, grid: SpectralGrid, value: float) -> "ScalarField":
        c = np.zeros(grid.shape, dtype=complex)
        c[grid.zero_index] = value * np.sqrt(grid.volume)
        return cls(grid, c)

    @classmethod
    def random(cls, grid: SpectralGrid, seed: int, decay: float = 2.0,
               stream: int = 0, energy: float | None = None,
               mean: bool = False) -> "ScalarField":
        return cls(grid, random_scalar_coeffs(grid, seed, decay, stream, energy, mean))

    @property
    def mean_coeff(self) -> complex:
        return complex(self.coeffs[self.grid.zero_index])

    def to_physical(self, n: int | None = None) -> np.ndarray:
        return to_physical(self.coeffs, self.grid, n)


Field = VelocityField | ScalarField


def _check_pair(u, v):
    if type(u) is not type(v):
        raise DimensionError("fields of different kinds")
    u.grid.check_same(v.grid)


# ---------------------------------------------------------------------------
# random fields (keyed by wavenumber, so P_n of a finer draw equals a coarser draw)


def _hermitian_gaussian(grid: SpectralGrid, seed: int, stream: int, tag: int,
                        step: int = 0) -> np.ndarray:
    """Unit-variance complex Gaussian per mode with exact reality symmetry."""
    k = np.stack(grid.kint, axis=-1)
    z = rng.normals(seed, step, stream, rng.wavenumber_code(k), tag)
    z = (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)
    flip = tuple(slice(None, None, -1) for _ in range(grid.dim))
    return (z + np.conj(z[flip])) / np.sqrt(2.0)


def random_velocity_coeffs(grid: SpectralGrid, seed: int, decay: float = 3.0,
                           stream: int = 0, energy: float | None = None) -> np.ndarray:
    """Random divergence-free field with amplitude ``|k|**-decay``."""
    g = _hermitian_gaussian(grid, seed, stream, rng.TAG_INIT)
    kabs = np.sqrt(sum(k.astype(float) ** 2 for k in grid.kint))
    kabs[grid.zero_index] = 1.0
    amp = kabs ** (-float(decay))
    amp[grid.zero_index] = 0.0
    k1, k2 = (k.astype(float) for k in grid.kint)
    # k_perp is odd in k, so the multiplier must be anti-Hermitian
    s = 1j * amp * g / kabs
    c = np.stack([-k2 * s, k1 * s])
    c = leray_coeffs(c, grid)
    if energy is not None:
        c = leray_coeffs(c * (np.sqrt(energy) / np.sqrt(norm_sq_coeffs(c, grid, 0, True))), grid)
    return c


def random_scalar_coeffs(grid: SpectralGrid, seed: int, decay: float = 2.0,
                         stream: int = 0, energy: float | None = None,
                         mean: bool = False) -> np.ndarray:
    g = _hermitian_gaussian(grid, seed, stream, rng.TAG_INIT)
    kabs = np.sqrt(sum(k.astype(float) ** 2 for k in grid.kint))
    kabs[grid.zero_index] = 1.0
    c = g * kabs ** (-float(decay))
    if not mean:
        c[grid.zero_index] = 0.0
    if energy is not None:
        c = c * (np.sqrt(energy) / np.sqrt(norm_sq_coeffs(c, grid)))
    return c


# ---------------------------------------------------------------------------
# public operations


def leray_project(raw, grid: SpectralGrid | None = None) -> VelocityField:
    """Divergence-free, mean-free part of a reality-symmetric vector field.

    ``raw`` is either a :class:`VelocityField` or a ``(2, 2M+1, 2M+1)``
    coefficient array together with ``grid``.
    """
    if isinstance(raw, VelocityField):
        return VelocityField(raw.grid, leray_coeffs(raw.coeffs, raw.grid))
    if grid is None:
        raise DimensionError("a grid is required for raw coefficient arrays")
    raw = np.asarray(raw)
    if raw.shape != (2,) + grid.shape:
        raise DimensionError(f"expected coefficients of shape {(2,) + grid.shape}")
    return VelocityField(grid, leray_coeffs(raw, grid))


def stokes_apply(u: VelocityField) -> VelocityField:
    """Stokes operator: multiply each mode by ``-|k|^2``."""
    return VelocityField(u.grid, stokes_coeffs(u.coeffs, u.grid))


def bilinear_B(u: VelocityField, v: VelocityField) -> VelocityField:
    _check_pair(u, v)
    same = u is v or np.array_equal(u.coeffs, v.coeffs)
    return VelocityField(u.grid, bilinear_coeffs(u.coeffs, None if same else v.coeffs, u.grid))


def inner_product(u: Field, v: Field, order: int = 0) -> float:
    """``sum_k |k|^(2 order) Re(u_k . conj v_k)``: order 0 is the L2 pairing."""
    _check_pair(u, v)
    w = sobolev_weights(u.grid, order)
    return float(np.sum((u.coeffs * np.conj(v.coeffs)).real * w))


def sobolev_norm(u: Field, order: int = 0) -> float:
    """``||u||_m``; order -1 is the dual norm used for the V* estimates."""
    if order < -1:
        raise ValueError("order must be >= -1")
    w = sobolev_weights(u.grid, order)
    return float(np.sqrt(np.sum((u.coeffs.real ** 2 + u.coeffs.imag ** 2) * w)))


SCALAR_OPS = ("laplacian", "bilaplacian", "dx", "dx2", "dx4")


def scalar_symbol(grid: SpectralGrid, op: str) -> np.ndarray:
    if op not in SCALAR_OPS:
        raise UnsupportedOperation(f"unknown operator {op!r}")
    if op == "laplacian":
        return -grid.ksq
    if op == "bilaplacian":
        return grid.ksq ** 2
    if grid.dim != 1:
        raise UnsupportedOperation(f"{op} is only defined for 1D fields")
    k = grid.kvec[0]
    return {"dx": 1j * k, "dx2": -k * k, "dx4": k ** 4}[op]


def scalar_op_apply(f: ScalarField, op: str) -> ScalarField:
    return ScalarField(f.grid, scalar_symbol(f.grid, op) * f.coeffs)


def phi_degree(phi) -> int:
    c = np.trim_zeros(np.asarray(phi, dtype=float), "b")
    return max(len(c) - 1, 0)


def check_phi(phi, dim: int) -> int:
    """Validate polynomial ``phi`` (ascending coefficients) against the growth bounds.

    Degree at most ``floor((d+4)/d)`` (5 in 1D, 3 in 2D) and, for degree >= 2,
    odd with positive leading coefficient so that ``phi'`` is bounded below.
    """
    c = np.trim_zeros(np.asarray(phi, dtype=float), "b")
    p = max(len(c) - 1, 0)
    bound = (dim + 4) // dim
    if p > bound:
        raise ConfigurationError(f"phi degree {p} exceeds the bound {bound} for dimension {dim}")
    if p >= 2 and (p % 2 == 0 or c[-1] <= 0):
        raise ConfigurationError("phi' must be bounded below: need odd degree, positive leading coefficient")
    return p


def phi_coeffs(c: np.ndarray, grid: SpectralGrid, phi) -> np.ndarray:
    """Coefficients of ``phi(u)`` for a batch of scalar coefficient arrays."""
    poly = np.trim_zeros(np.asarray(phi, dtype=float), "b")
    p = check_phi(poly, grid.dim)
    if p <= 1:
        out = (poly[1] if len(poly) > 1 else 0.0) * np.asarray(c, dtype=complex)
        if len(poly):
            out = out.copy()
            out[(...,) + grid.zero_index] += poly[0] * np.sqrt(grid.volume)
        return out
    n = grid.physical_size(p)
    x = to_physical(c, grid, n)
    y = np.full_like(x, poly[-1])
    for a in poly[-2::-1]:
        y = y * x + a
    return to_spectral(y, grid)


def nonlinearity_phi(f: ScalarField, phi=(0.0, -1.0, 0.0, 1.0)) -> ScalarField:
    """Pointwise ``phi(f)`` projected back onto the retained modes.

    The default polynomial is the double-well derivative ``x**3 - x``.
    """
    return ScalarField(f.grid, phi_coeffs(f.coeffs, f.grid, phi))


def burgers_coeffs(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """``u du/dx = d/dx (u^2 / 2)`` in 1D, dealiased."""
    if grid.dim != 1:
        raise UnsupportedOperation("Burgers term is one-dimensional")
    x = to_physical(c, grid)
    return 1j * grid.kvec[0] * to_spectral(0.5 * x * x, grid)
