import re

import pytest

_LINES = {}


@pytest.fixture(scope="session")
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(name, passed, detail):
        line = f"{name} {'PASS' if passed else 'FAIL'} {detail}"
        _LINES[name] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_LINES, key=lambda n: int(re.sub(r"\D", "", n))):
        terminalreporter.write_line(_LINES[name])
