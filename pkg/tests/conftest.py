import sys
from pathlib import Path

import numpy as np
import pytest

# gradcheck.py lives next to the tests
sys.path.insert(0, str(Path(__file__).parent))

from insomnia_eeg.edf_io import Recording


def make_sine_recording(
    freq: float,
    fs: float = 128.0,
    duration: float = 30.0,
    amplitude: float = 1.0,
    subject_id: str = "test",
    channel: str = "Fp2",
) -> Recording:
    t = np.arange(int(round(duration * fs))) / fs
    return Recording(
        subject_id=subject_id,
        channel=channel,
        fs=fs,
        samples=amplitude * np.sin(2.0 * np.pi * freq * t),
    )


@pytest.fixture()
def sine_recording():
    return make_sine_recording


def cascade_gain(sos: np.ndarray, freq: float, fs: float) -> float:
    """|H(e^{j 2 pi f / fs})| evaluated directly from the section polynomials.

    Independent of scipy's frequency-response helpers on purpose: this is
    the oracle the designed filter is checked against.
    """
    z1 = np.exp(-2j * np.pi * freq / fs)
    z2 = z1 * z1
    h = 1.0 + 0.0j
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * z1 + b2 * z2) / (a0 + a1 * z1 + a2 * z2)
    return float(np.abs(h))
