import warnings

import pytest

# numba complains once per process about the system TBB being too old
warnings.filterwarnings("ignore", message="The TBB threading layer")

_RESULTS = {}


@pytest.fixture
def criterion():
    """``criterion(number, title, passed, detail)`` records one acceptance verdict."""

    def record(number, title, passed, detail=""):
        _RESULTS[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {number:>2}. {title}: {detail}")
