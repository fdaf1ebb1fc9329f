"""Collects acceptance verdicts and prints them after the run."""

import pytest

VERDICTS: list = []


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
