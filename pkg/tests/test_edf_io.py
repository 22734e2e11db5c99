import datetime
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insomnia_eeg.edf_io import (
    Recording,
    canonical_channel,
    read_edf,
    read_header,
    resample,
    write_edf,
)
from insomnia_eeg.errors import (
    BadScaling,
    ChannelNotFound,
    InvalidSignal,
    ParseError,
    UnsupportedRate,
)

from conftest import make_sine_recording


def _pad(text, width):
    return text[:width].ljust(width).encode("ascii")


def _minimal_edf_bytes(
    n_records=1,
    spr=4,
    label="Fp2",
    phys=(-100.0, 100.0),
    dig=(-2048, 2047),
    payload=None,
):
    """Handcrafted single-signal EDF, built independently of write_edf."""
    header = b"".join(
        [
            _pad("0", 8),
            _pad("subj", 80),
            _pad("", 80),
            _pad("01.01.00", 8),
            _pad("22.19.06", 8),
            _pad("512", 8),
            _pad("", 44),
            _pad(str(n_records), 8),
            _pad("1", 8),
            _pad("1", 4),
            _pad(label, 16),
            _pad("", 80),
            _pad("uV", 8),
            _pad(str(phys[0]), 8),
            _pad(str(phys[1]), 8),
            _pad(str(dig[0]), 8),
            _pad(str(dig[1]), 8),
            _pad("", 80),
            _pad(str(spr), 8),
            _pad("", 32),
        ]
    )
    if payload is None:
        payload = np.full(n_records * spr, dig[0], dtype="<i2")
    return header + payload.tobytes()


def test_digital_min_maps_to_physical_min(tmp_path):
    path = tmp_path / "min.edf"
    path.write_bytes(_minimal_edf_bytes())
    rec = read_edf(path, "Fp2")
    np.testing.assert_allclose(rec.samples, -100.0)
    assert rec.fs == 4.0
    assert rec.start_time == datetime.time(22, 19, 6)


def test_round_trip_sine_within_one_lsb(tmp_path):
    rec = make_sine_recording(10.0, fs=512.0, duration=30.0)
    path = tmp_path / "sine.edf"
    write_edf(rec, path)
    back = read_edf(path, "Fp2")
    lsb = (2 * 1.0) / 65535  # symmetric range over the 16-bit span
    assert np.max(np.abs(back.samples - rec.samples)) <= lsb
    assert back.fs == rec.fs


def test_constant_signal_round_trip(tmp_path):
    rec = Recording("s", "C4", 128.0, np.full(1280, 5.0))
    path = tmp_path / "const.edf"
    write_edf(rec, path)
    back = read_edf(path, "C4")
    assert len(back.samples) == 1280
    assert np.max(np.abs(back.samples - 5.0)) <= (2 * 5.0) / 65535


def test_write_empty_recording_rejected(tmp_path):
    rec = Recording("s", "Fp2", 128.0, np.empty(0))
    with pytest.raises(InvalidSignal):
        write_edf(rec, tmp_path / "x.edf")


def test_write_nonfinite_rejected(tmp_path):
    rec = Recording("s", "Fp2", 128.0, np.array([1.0, np.nan, 2.0]))
    with pytest.raises(InvalidSignal):
        write_edf(rec, tmp_path / "x.edf")


def test_file_size_formula(tmp_path):
    rec = make_sine_recording(5.0, fs=128.0, duration=60.0)
    path = tmp_path / "size.edf"
    write_edf(rec, path)
    assert path.stat().st_size == 256 + 256 + 60 * 128 * 2


def test_clock_arithmetic_for_overnight_recording(tmp_path):
    # start 22:19:06 and 29,970 s of signal end at 06:38:36 the next morning
    start = datetime.time(22, 19, 6)
    end = datetime.time(6, 38, 36)
    seconds = (
        (24 * 3600 + end.hour * 3600 + end.minute * 60 + end.second)
        - (start.hour * 3600 + start.minute * 60 + start.second)
    )
    assert seconds == 29_970
    rec = Recording("overnight", "Fp2", 8.0, np.zeros(8 * seconds), start_time=start)
    path = tmp_path / "night.edf"
    write_edf(rec, path)
    back = read_edf(path, "Fp2")
    assert back.duration == pytest.approx(29_970.0)
    assert back.start_time == start


@pytest.mark.parametrize(
    "stored,requested",
    [("EEG C4-A1", "C4"), ("C4-A1", "c4"), ("Fp2-F4", "Fp2"), ("fp2", "FP2")],
)
def test_channel_matching_ignores_montage_suffixes(tmp_path, stored, requested):
    path = tmp_path / "chan.edf"
    path.write_bytes(_minimal_edf_bytes(label=stored))
    assert read_edf(path, requested).channel == requested


def test_channel_absent(tmp_path):
    path = tmp_path / "chan.edf"
    path.write_bytes(_minimal_edf_bytes(label="EOG left"))
    with pytest.raises(ChannelNotFound):
        read_edf(path, "C4")


def test_degenerate_digital_range(tmp_path):
    path = tmp_path / "bad.edf"
    path.write_bytes(_minimal_edf_bytes(dig=(5, 5)))
    with pytest.raises(BadScaling):
        read_edf(path, "Fp2")


def test_wrong_header_byte_count(tmp_path):
    blob = bytearray(_minimal_edf_bytes())
    blob[184:192] = b"9999    "
    path = tmp_path / "bad.edf"
    path.write_bytes(bytes(blob))
    with pytest.raises(ParseError):
        read_edf(path, "Fp2")


def test_truncated_payload(tmp_path):
    blob = _minimal_edf_bytes(n_records=10)
    path = tmp_path / "trunc.edf"
    path.write_bytes(blob[:-40])
    with pytest.raises(ParseError):
        read_edf(path, "Fp2")


def test_truncated_header(tmp_path):
    path = tmp_path / "tiny.edf"
    path.write_bytes(b"0  ")
    with pytest.raises(ParseError):
        read_header(path)


def test_canonical_channel():
    assert canonical_channel(" EEG Fp2-F4 ") == "FP2"
    assert canonical_channel("C4") == "C4"


# --- resampling ---------------------------------------------------------------


def test_resample_identity_returns_equal_samples():
    rec = make_sine_recording(10.0, fs=128.0)
    out = resample(rec, 128.0)
    assert out.fs == 128.0
    np.testing.assert_array_equal(out.samples, rec.samples)


def test_resample_512_to_128_tracks_ideal_sine():
    rec = make_sine_recording(10.0, fs=512.0, duration=30.0)
    out = resample(rec, 128.0)
    assert len(out.samples) == math.ceil(len(rec.samples) / 4)
    ideal = np.sin(2 * np.pi * 10.0 * np.arange(len(out.samples)) / 128.0)
    core = slice(64, len(ideal) - 64)  # skip filter edge transients
    corr = np.corrcoef(out.samples[core], ideal[core])[0, 1]
    assert corr > 0.999


def test_resample_1450_to_128_keeps_20hz_amplitude():
    rec = make_sine_recording(20.0, fs=1450.0, duration=20.0)
    assert Fraction(128, 1450) == Fraction(64, 725)
    out = resample(rec, 128.0)
    assert len(out.samples) == math.ceil(len(rec.samples) * 64 / 725)
    core = out.samples[128:-128]
    amplitude = np.sqrt(2.0) * np.sqrt(np.mean(core**2))
    assert abs(amplitude - 1.0) < 0.02


def test_unsupported_irrational_ratio():
    rec = make_sine_recording(1.0, fs=math.pi * 100, duration=5.0)
    with pytest.raises(UnsupportedRate):
        resample(rec, 128.0)


def test_resample_rejects_nonpositive_target():
    rec = make_sine_recording(1.0)
    with pytest.raises(UnsupportedRate):
        resample(rec, 0.0)


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    fs=st.sampled_from([64.0, 100.0, 128.0, 256.0]),
    seconds=st.integers(2, 8),
)
def test_round_trip_property(tmp_path_factory, seed, fs, seconds):
    rng = np.random.default_rng(seed)
    n = int(fs * seconds)
    samples = rng.normal(0.0, 40.0, n)
    rec = Recording(f"r{seed}", "Fp2", fs, samples)
    path = tmp_path_factory.mktemp("edf") / "prop.edf"
    write_edf(rec, path)
    back = read_edf(path, "Fp2")
    peak = float(np.ceil(np.max(np.abs(samples)) * 1000) / 1000)
    lsb = 2 * peak / 65535
    assert back.fs == fs
    assert len(back.samples) == n
    assert np.max(np.abs(back.samples - samples)) <= lsb


@settings(max_examples=15, deadline=None)
@given(freq=st.floats(1.0, 40.0))
def test_resample_preserves_dominant_frequency(freq):
    rec = make_sine_recording(freq, fs=512.0, duration=8.0)
    out = resample(rec, 128.0)
    spectrum = np.abs(np.fft.rfft(out.samples))
    peak_hz = np.argmax(spectrum) * 128.0 / len(out.samples)
    assert abs(peak_hz - freq) <= 128.0 / len(out.samples)


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-3.0, 3.0), b=st.floats(-3.0, 3.0))
def test_resample_linearity(a, b):
    x = make_sine_recording(7.0, fs=512.0, duration=4.0)
    y = make_sine_recording(19.0, fs=512.0, duration=4.0)
    combined = Recording("c", "Fp2", 512.0, a * x.samples + b * y.samples + 1e-6)
    lhs = resample(combined, 128.0).samples
    rhs = (
        a * resample(x, 128.0).samples
        + b * resample(y, 128.0).samples
        + resample(Recording("o", "Fp2", 512.0, np.full_like(x.samples, 1e-6)), 128.0).samples
    )
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * max(1.0, np.max(np.abs(lhs)))
