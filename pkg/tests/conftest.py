import numpy as np
import pytest

from sdflab.geometry import GraphSurface
from sdflab.lattice import FlatTorus, PeriodicGrid

TWO_PI = 2 * np.pi


def band_limited(grid, seed, kmax=3, slope=0.3):
    """Smooth random trigonometric polynomial with sup |grad f| = slope."""
    rng = np.random.default_rng(seed)
    coords = grid.coordinates()
    f = np.zeros(grid.shape)
    ks = range(-kmax, kmax + 1)
    for k in np.array(np.meshgrid(*[ks] * grid.dimension, indexing="ij")).reshape(grid.dimension, -1).T:
        if not np.any(k):
            continue
        arg = sum(2 * np.pi * ki * x / L for ki, x, L in zip(k, coords, grid.torus.side_lengths))
        f += rng.standard_normal() * np.cos(arg + rng.uniform(0, TWO_PI))
    grad = np.sqrt(np.sum(grid.gradient(f) ** 2, axis=0)).max()
    return slope * f / grad


@pytest.fixture(scope="session")
def grid64():
    return PeriodicGrid(FlatTorus((TWO_PI, TWO_PI)), (64, 64))


@pytest.fixture(scope="session")
def grid32():
    return PeriodicGrid(FlatTorus((TWO_PI, TWO_PI)), (32, 32))


@pytest.fixture(scope="session")
def random_graph(grid64):
    return GraphSurface(grid64, band_limited(grid64, 7))
