import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_ctrnn(rng, n=3, i=2, dt=1.0, w_scale=1.0):
    from rtrrl.cells import CtRnnParams

    z = i + n + 1
    return CtRnnParams(w_scale * rng.normal(size=(n, z)) / np.sqrt(z), rng.uniform(1.2, 4.0, size=n), dt)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
