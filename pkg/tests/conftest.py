import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from choquard.grid import Field, Grid, Params
from choquard.riesz import build_kernel
from choquard.solve import SolveOptions, canonical_groundstate_init, solve_groundstate

settings.register_profile(
    "artifact", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("artifact")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


CONFIG_A = Params(2, 1.0, 2.5)
CONFIG_B = Params(2, 1.0, 1.8)
CONFIG_GRID = Grid(2, 256, 40.0)


@pytest.fixture(scope="session")
def config_grid():
    return CONFIG_GRID


@pytest.fixture(scope="session")
def kernel_a():
    return build_kernel(CONFIG_GRID, 1.0)


@pytest.fixture(scope="session")
def groundstate_a(kernel_a):
    return solve_groundstate(CONFIG_A, kernel_a, SolveOptions(),
                             canonical_groundstate_init(CONFIG_GRID, 0))


@pytest.fixture(scope="session")
def groundstate_b(kernel_a):
    return solve_groundstate(CONFIG_B, kernel_a, SolveOptions(),
                             canonical_groundstate_init(CONFIG_GRID, 0))


@pytest.fixture(scope="session")
def small_grid():
    return Grid(2, 64, 20.0)


@pytest.fixture(scope="session")
def small_kernel(small_grid):
    return build_kernel(small_grid, 1.0)


def bump_field(grid: Grid, centers, amplitudes, width: float) -> Field:
    """Sum of C^∞ compactly supported bumps ``a exp(1 - 1/(1 - (r/w)^2))``."""
    vals = np.zeros(grid.shape)
    coords = grid.mesh()
    for c, a in zip(centers, amplitudes):
        r2 = sum((x - x0) ** 2 for x, x0 in zip(coords, c)) / width**2
        inside = r2 < 1
        with np.errstate(divide="ignore", over="ignore"):
            b = np.where(inside, np.exp(1 - 1 / np.where(inside, 1 - r2, 1.0)), 0.0)
        vals = vals + a * np.broadcast_to(b, grid.shape)
    return Field(grid, vals)
