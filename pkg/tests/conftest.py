import numpy as np
import pytest

from fspg.functionals import ProblemSpec
from fspg.gridfield import Field, GridSpec
from fspg.potentials import constant
from fspg.solver import SolverConfig, minimize_on_manifold


def smooth_random_field(grid: GridSpec, rng, bumps: int = 3, positive: bool = False) -> Field:
    """Sum of a few Gaussians with random centers, widths and amplitudes."""
    x, y, z = grid.coordinates()
    out = np.zeros(grid.shape)
    for _ in range(bumps):
        c = rng.uniform(-0.15, 0.15, 3) * grid.L
        w = rng.uniform(0.06, 0.12) * grid.L
        a = rng.uniform(0.5, 2.0) * (1 if positive else rng.choice([-1, 1]))
        out += a * np.exp(-((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / (2 * w * w))
    return Field(grid, out)


def random_field(grid: GridSpec, rng) -> Field:
    return Field(grid, rng.standard_normal(grid.shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def base_problem():
    return ProblemSpec(0.9, 3.0, 1.0, constant(1.0), GridSpec(32, 30.0))


@pytest.fixture(scope="session")
def ground_state(base_problem):
    return minimize_on_manifold(base_problem, SolverConfig(seed=0))
