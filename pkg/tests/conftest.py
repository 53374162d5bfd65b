import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("inextensa", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("inextensa")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n=(), scale=1.0):
    A = rng.normal(size=tuple(n) + (3, 3))
    return scale * (A @ np.swapaxes(A, -1, -2)) + np.eye(3)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
