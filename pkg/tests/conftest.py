import time

import numpy as np
import pytest

from hucai.dynamics import SimulationConfig, run_simulation
from hucai.grid import Grid2D
from hucai.model import Params
from hucai.profiles import bump_source, default_m0

_RUNS = {}
RUN_SECONDS = {}
ACCEPTANCE_LINES: list[str] = []


def default_run(n: int, T: float = 1.0):
    """Default coupled run on an n x n grid, cached for the whole session."""
    key = (n, T)
    if key not in _RUNS:
        grid = Grid2D.unit(n)
        cfg = SimulationConfig(grid, Params(), bump_source(grid), default_m0(grid), T=T,
                               snapshot_stride=max(1, n // 4))
        t0 = time.perf_counter()
        _RUNS[key] = run_simulation(cfg)
        RUN_SECONDS[key] = time.perf_counter() - t0
    return _RUNS[key]


@pytest.fixture(scope="session")
def default_runs():
    return default_run


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
