import numpy as np
import pytest

from erann.dsp import SAMPLE_RATE, AudioClip

ACCEPTANCE_LINES = []


def tone(freq, seconds=1.0, amp=0.5, sr=SAMPLE_RATE, labels=None):
    n = int(round(seconds * sr))
    return AudioClip(amp * np.sin(2 * np.pi * freq * np.arange(n) / sr), sr, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
