import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL summary for an acceptance criterion."""

    def _record(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
