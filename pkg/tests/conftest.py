import numpy as np
import pytest

from zvonkin.fields import Grid, SpaceTimeField


def holder_drift(t, X):
    return np.minimum(np.abs(X) ** 0.5, 1.0) * np.sign(X)


@pytest.fixture(scope="session")
def grid1():
    """Criterion grid: d=1, box [-8, 8], hx=0.02, ht=1e-3, T=1."""
    return Grid(1, 8.0, 0.02, 1.0, 1e-3)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(1, 4.0, 0.05, 0.5, 0.01)


@pytest.fixture(scope="session")
def holder_b(grid1):
    return SpaceTimeField.from_function(grid1, holder_drift)


@pytest.fixture(scope="session")
def holder_transform(holder_b):
    from zvonkin.transform import select_lambda

    history = []
    z = select_lambda(holder_b, history=history)
    z.history = history
    return z


CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Print and remember one pass/fail line for an acceptance criterion."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} | {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
