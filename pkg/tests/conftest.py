import numpy as np
import pytest

from exchange_blockade import dvr, dynamics, twobody
from exchange_blockade.model import RunConfig, TrapConfig

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_log(request):
    """Record one verdict line per acceptance criterion for the terminal summary."""

    def record(number, name, passed, detail):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        print(line)
        return passed

    return record


# auto-selected d_max at default settings; frozen from the bisection of
# the lowest gerade/ungerade splitting against the 1e-6 threshold
D_MAX_DEFAULT = 9.4241943359375


@pytest.fixture(scope="session")
def config():
    return RunConfig()


@pytest.fixture(scope="session")
def trap():
    return TrapConfig(d_max=D_MAX_DEFAULT)


@pytest.fixture(scope="session")
def grid(trap):
    return dvr.default_grid(trap)


@pytest.fixture(scope="session")
def model8(config):
    return dynamics.build_model(config, 8.0)


@pytest.fixture(scope="session")
def model0(config):
    return dynamics.build_model(config, 0.0)


@pytest.fixture(scope="session")
def small_sweep(trap):
    """Coarse sweep for derivative checks: 6 orbitals on a 61-point d grid."""
    grid = dvr.default_grid(trap, 201)
    d_grid = np.linspace(0.0, trap.d_max, 61)
    return twobody.sweep_orbitals(trap, grid, d_grid, 6)
