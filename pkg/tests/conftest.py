import numpy as np
import pytest

from rt60track.signal import SAMPLE_RATE, Air, AudioSignal


def exponential_air(rt60, seconds=None, noise_db=None, seed=0, carrier=False):
    """Exponential decay with the given RT60, optionally modulating white
    noise, plus an optional white floor ``noise_db`` below the peak."""
    rng = np.random.default_rng(seed)
    n = int((seconds if seconds is not None else 1.5 * rt60) * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    h = np.exp(-3.0 * np.log(10.0) * t / rt60)
    if carrier:
        h = h * rng.standard_normal(n)
    if noise_db is not None:
        h = h + 10.0 ** (noise_db / 20.0) * rng.standard_normal(n)
    return h


def make_air(rt60, air_id="exp", seed=0, seconds=None):
    return Air(AudioSignal(exponential_air(rt60, seconds, seed=seed, carrier=True)), rt60, "simulated", air_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting -----------------------------------------------------

ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
