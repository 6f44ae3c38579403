import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from calibkit.core import BinaryDataset

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def d4():
    """Four evenly spaced predictions with alternating labels."""
    return BinaryDataset([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, text: str):
        line = f"AC{number:>2} {'PASS' if ok else 'FAIL'}  {text}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
