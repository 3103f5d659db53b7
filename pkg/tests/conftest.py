import numpy as np
import pytest

from raincap import gradcore as gc

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with gc.precision(np.float64):
        yield


@pytest.fixture
def acceptance_report():
    def record(num, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
