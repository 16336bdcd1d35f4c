"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

_VERDICTS = {}


class Recorder:
    def __init__(self, capsys):
        self._capsys = capsys

    def __call__(self, number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        _VERDICTS[number] = line
        with self._capsys.disabled():
            print("\n" + line)
        return passed


@pytest.fixture
def verdict(capsys):
    return Recorder(capsys)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
