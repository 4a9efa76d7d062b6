import numpy as np
import pytest

_RESULTS = {}


@pytest.fixture
def acceptance():
    """Record one line per acceptance criterion for the terminal summary."""

    def record(number, title, passed, detail=""):
        _RESULTS[number] = (title, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
