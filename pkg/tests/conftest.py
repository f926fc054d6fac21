import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number, name, ok, detail):
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
