import numpy as np
import pytest

from dpir.oracle import make_world, rng_stream
from dpir.schedule import VarianceParam, build_linear_schedule, schedule_from_betas


@pytest.fixture(scope="session")
def sched():
    return build_linear_schedule(1000, 1e-4, 2e-2)


@pytest.fixture(scope="session")
def sched_tilde():
    return build_linear_schedule(1000, 1e-4, 2e-2, VarianceParam.TILDE_BETA)


@pytest.fixture
def five_step():
    return schedule_from_betas([0.05, 0.1, 0.15, 0.2, 0.3])


@pytest.fixture
def rng():
    return rng_stream(1234, 0)


@pytest.fixture(scope="session")
def world_8x12():
    # M = 8 observations of an N = 12 signal
    return make_world(12, 8, seed=21, spectral_cap=0.9, sigma_y=0.4)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
