import numpy as np
import pytest

from cbfadapt.barrier import wall_barrier
from cbfadapt.dynamics import DoubleIntegrator, PlanarQuadplane
from cbfadapt.iccbf import IccbfSpec

ACCEPTANCE_LINES = []


@pytest.fixture
def di():
    return DoubleIntegrator()


@pytest.fixture
def di_spec(di):
    """Wall at p = 1, r = 2, k = (1, 1)."""
    return IccbfSpec(di, wall_barrier(1.0), (1.0, 1.0))


@pytest.fixture
def quadplane():
    return PlanarQuadplane()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
