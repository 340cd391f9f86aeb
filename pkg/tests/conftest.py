import json
from pathlib import Path

import numpy as np
import pytest

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def l2c(pair):
    return np.asarray(pair[0]) + 1j * np.asarray(pair[1])


@pytest.fixture
def frozen():
    return FROZEN


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
