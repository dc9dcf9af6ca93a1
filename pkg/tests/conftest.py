import numpy as np
import pytest

from confcap.domain import make_ball, make_ellipsoid
from confcap.grid import build_grid
from confcap.solver import normalize_to_log_growth, solve_annulus

COARSE = (32, 12, 24)


@pytest.fixture(scope="session")
def ball_grid():
    return build_grid(make_ball(1.0).domain, 32.0, COARSE)


@pytest.fixture(scope="session")
def ellipsoid_grid():
    return build_grid(make_ellipsoid((1.2, 1.0, 1.0)), 32 * 1.2, COARSE)


@pytest.fixture(scope="session")
def ball_potential(ball_grid):
    return normalize_to_log_growth(solve_annulus(ball_grid))


@pytest.fixture(scope="session")
def ellipsoid_potential(ellipsoid_grid):
    return normalize_to_log_growth(solve_annulus(ellipsoid_grid))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
