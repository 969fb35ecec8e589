import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from twophasecox.survival import Dataset

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_dataset(rng, n=30, p=2, censor=0.3, ties=False):
    x = rng.standard_normal((n, p))
    t = rng.exponential(1.0, n) / np.exp(x @ np.linspace(0.5, -0.5, p))
    if ties:
        t = np.ceil(t * 4) / 4
    e = rng.random(n) > censor
    e[0] = True
    return Dataset(t, e, x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
