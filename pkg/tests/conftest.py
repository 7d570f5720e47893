import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

_CRITERIA = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(label, ok, detail)."""

    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
