import numpy as np
import pytest
from hypothesis import settings

from vsic.hamiltonian import profile

settings.register_profile("vsic", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("vsic")


@pytest.fixture(scope="session")
def dt0():
    return profile(n_si=0)


@pytest.fixture(scope="session")
def dt1():
    return profile(n_si=1)


@pytest.fixture(scope="session")
def dt2():
    return profile(n_si=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Record one acceptance criterion outcome and print it."""
    def _record(criterion: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((criterion, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
