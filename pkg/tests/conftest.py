import numpy as np
import pytest

from mvspde.spectral import SpectralGrid


@pytest.fixture
def grid32():
    return SpectralGrid(32, 2)


@pytest.fixture
def grid8():
    return SpectralGrid(8, 2)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def velocity_from_function(grid, f, n=None):
    """Leray-projected coefficients of a velocity given as f(x1, x2) -> (u1, u2)."""
    from mvspde.spectral import leray_coeffs, physical_points, to_spectral

    n = n or grid.dealias_size
    x1, x2 = physical_points(grid, n)
    return leray_coeffs(to_spectral(np.stack(f(x1, x2)), grid), grid)
