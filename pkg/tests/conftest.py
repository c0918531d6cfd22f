import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}" + (f"  [{detail}]" if detail else "")
        VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
