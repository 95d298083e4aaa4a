import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from randgreen import green as gm
from randgreen.kernels import ExpTailKernel, GaussianKernel, GridSpec

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")



@pytest.fixture(scope="session")
def gauss():
    return GaussianKernel(3, 1.0)


@pytest.fixture(scope="session")
def exptail():
    return ExpTailKernel(3, 1.0)


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(3, 8.0, 64)


@pytest.fixture(scope="session")
def g0_small(gauss, grid64):
    return gm.green_series(gauss, grid64, 1e-10)


@pytest.fixture(scope="session")
def g0_mid(gauss):
    return gm.green_series(gauss, GridSpec(3, 24.0, 64), 1e-9)


@pytest.fixture(scope="session")
def g0_wide(gauss):
    # wide enough that exp_abs and its squares stay inside the box
    return gm.green_series(gauss, GridSpec(3, 32.0, 128), 1e-9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
