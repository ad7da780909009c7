import random

import pytest

from ivotesim import wire
from ivotesim.ballot import DEFAULT_RACES
from ivotesim.server import ElectionConfig, IVoteServer

FAST = 80   # reduced PBKDF2 iteration count for protocol tests


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def server(rng):
    return IVoteServer(ElectionConfig(DEFAULT_RACES, kdf_iterations=FAST), rng)


@pytest.fixture
def clock():
    return wire.SimClock()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in mod.RESULTS.items():
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        terminalreporter.write_line(f"[{status}] {name}: {extra}")
