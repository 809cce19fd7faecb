import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one pass/fail line; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(line):
        lines.append(line)
        print(line, flush=True)

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
