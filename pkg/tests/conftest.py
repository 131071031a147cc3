"""
Shared fixtures for the tdh test-suite.

Transient integrations are the slow part, so traces every test module needs
are produced once per session in a single batched run.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from tdh.circuit_sim import TransientJob, TransientTrace, simulate_batch
from tdh.presets import get_preset

# 4.096 GS/s with 2**14 samples leaves 4096 steady-state samples: 1 MHz bins
TONE_INTERVAL = 1.0 / 4.096e9
TONE_SAMPLES = 2 ** 14


def tone_trace(*components, noise: float = 0.0, seed: int = 0) -> TransientTrace:
    """Sum of (frequency Hz, amplitude V) sinusoids on the 1 MHz test grid."""
    t = np.arange(TONE_SAMPLES) * TONE_INTERVAL
    v = np.zeros(TONE_SAMPLES)
    for frequency, amplitude in components:
        v += amplitude * np.sin(2 * np.pi * frequency * t)
    if noise:
        v += noise * np.random.default_rng(seed).standard_normal(TONE_SAMPLES)
    return TransientTrace(TONE_INTERVAL, v, 0.0, seed)


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


BOARD_JOBS = {
    "board1": TransientJob(get_preset("board1"), 0),
    "board1_again": TransientJob(get_preset("board1"), 0),
    "board1_seed1": TransientJob(get_preset("board1"), 1),
    "board1_low": TransientJob(get_preset("board1").with_bias(0.05), 0),
    "board2": TransientJob(get_preset("board2"), 0),
}


@pytest.fixture(scope="session")
def board_traces():
    """Default-length traces at 200 mV (and one quiescent bias), keyed by BOARD_JOBS name."""
    results = simulate_batch(list(BOARD_JOBS.values()))
    return dict(zip(BOARD_JOBS, results))
