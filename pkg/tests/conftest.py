import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gradon.geometry import Domain, GaussianBump
from gradon.transform import Grid

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def domain():
    return Domain(n=2)


@pytest.fixture
def bump():
    return GaussianBump(center=(0.1, 0.05), width=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid(size, n=2):
    return Grid(Domain(n=n), size)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
