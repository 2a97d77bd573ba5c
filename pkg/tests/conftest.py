import numpy as np
import pytest

from gibbsfiksel import MarkSet, PolygonalWindow

ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store one acceptance outcome; printed again in the terminal summary."""
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_marks():
    return MarkSet(["tumor", "immune"])


@pytest.fixture
def square():
    return PolygonalWindow.rectangle(0.0, 0.0, 10.0, 10.0)


@pytest.fixture
def l_shape():
    return PolygonalWindow.from_rings([[(0, 0), (4, 0), (4, 1), (1, 1), (1, 3), (0, 3)]])
