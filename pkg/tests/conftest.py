import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from helmholtz27.model import SourceSpec, VelocityModel, homogeneous_model

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def small_homogeneous() -> VelocityModel:
    return homogeneous_model((9, 10, 11), 50.0, 1500.0)


@pytest.fixture
def small_random_model() -> VelocityModel:
    rng = np.random.default_rng(7)
    c = 1500.0 + 1500.0 * rng.random((8, 9, 10))
    b = 0.5 + rng.random((8, 9, 10))
    return VelocityModel(c, 25.0, b)


@pytest.fixture
def centre_source() -> SourceSpec:
    return SourceSpec((200.0, 200.0, 250.0))
