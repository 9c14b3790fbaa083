"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

RESULTS = {}


@pytest.fixture
def verdict():
    def record(number, name, ok, detail):
        RESULTS[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(RESULTS[number])
        assert ok, RESULTS[number]
    return record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
