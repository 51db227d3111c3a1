import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thermoquench.model import ModelParams

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def l2_oracle():
    """The 4x4 hand-checked case: H = diag(2, -3, -1, 2)."""
    return ModelParams(2, g=0.0, h=0.0, h_s=0.5)


def quench_pair(L, g0, basis="z", h_s=None):
    h0 = ModelParams(L, g=g0, h=0.0, h_s=1.0 / L if h_s is None else h_s, basis=basis)
    h1 = ModelParams(L, g=1.0, h=1.0, basis=basis)
    return h0, h1


CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record a named acceptance result; printed once per criterion at the end of the run."""
    def record(key: str, passed: bool, detail: str = ""):
        CRITERIA[key] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA, key=lambda k: (int(k.split()[0]), k)):
        passed, detail = CRITERIA[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  criterion {key}  {detail}")
