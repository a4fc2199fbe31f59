import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hpe.basis import make_grid

settings.register_profile("hpe", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hpe")


@pytest.fixture(scope="session")
def g8():
    return make_grid(8, 8, 6)


@pytest.fixture(scope="session")
def g6():
    return make_grid(6, 6, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
