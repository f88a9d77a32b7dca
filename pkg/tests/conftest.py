import numpy as np
import pytest

from eareeg.dataio import IN_EAR_CHANNELS, EegRecording

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def white_recording(rng):
    return EegRecording(2, 1000.0, list(IN_EAR_CHANNELS), rng.standard_normal((8, 6000)))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
