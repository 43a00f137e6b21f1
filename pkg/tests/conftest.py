import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=300, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, p, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    ev = np.exp(rng.uniform(0, np.log(cond), p))
    m = (q * ev) @ q.T
    return 0.5 * (m + m.T)


def random_pacf(rng, p, q, bound=1.0):
    return rng.uniform(-bound, bound, (p, q)) * (1 - 1e-9)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
