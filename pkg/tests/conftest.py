import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_verdicts = {}


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL outcome for an acceptance criterion."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        _verdicts[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_verdicts):
            terminalreporter.write_line(_verdicts[number])
