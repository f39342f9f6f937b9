import numpy as np
import pytest

from popgraph.data import SyntheticConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_cohort():
    """60 patients, 6 hours, every feature group present."""
    return generate_synthetic(SyntheticConfig(n=60, timesteps=6, ts_continuous=4, ts_discrete=3), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
