import numpy as np
import pytest

from superdrift.grid import GridSpec
from superdrift.spectral import band_limit, build_partition


@pytest.fixture
def grid2():
    return GridSpec(2, 2 * np.pi, 64, 1.0, 8)


@pytest.fixture
def part2(grid2):
    return build_partition(grid2)


def random_band_limited(grid, seed, fraction=0.25, shape=()):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(shape + grid.shape)
    return band_limit(a, grid, fraction)


def dealiased(grid, seed, shape=()):
    """Random field on |k_i| < N/6 so pairwise products stay inside the 2/3 band."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(shape + grid.shape)
    mask = np.ones(grid.rshape, dtype=bool)
    for c in grid.lattice:
        mask &= np.abs(c) < grid.N / 6
    return grid.ifft(grid.fft(a) * mask)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
