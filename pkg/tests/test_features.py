import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insomnia_eeg.edf_io import Recording
from insomnia_eeg.errors import AlignmentError, DegenerateSignal
from insomnia_eeg.features import (
    FEATURE_NAMES,
    FeatureConfig,
    Hypnogram,
    band_power,
    epoch_features,
    extract_all,
    psd,
    read_feature_csv,
    read_hypnogram,
    sleep_features,
    slow_wave_gated_power,
    spectral_features,
    temporal_features,
    write_feature_csv,
    write_hypnogram,
    zero_crossing_rate,
)
from insomnia_eeg.preprocess import Epoch, segment
from insomnia_eeg.synth import make_profile, generate_subject

from conftest import make_sine_recording


def _sine_epoch(freq, fs=128.0, amplitude=1.0, seconds=30.0):
    t = np.arange(int(fs * seconds)) / fs
    return Epoch("s", "Fp2", 0, 0.0, fs, amplitude * np.sin(2 * np.pi * freq * t))


def test_feature_name_inventory():
    assert len(FEATURE_NAMES) == 31
    assert len(set(FEATURE_NAMES)) == 31
    assert FEATURE_NAMES[0] == "MEAN"
    assert FEATURE_NAMES[-2:] == ("SLEEP_EFFICIENCY", "TOTAL_SLEEP_TIME")


# --- temporal -------------------------------------------------------------------


def test_hjorth_on_pure_sine():
    mean, std, zcr, activity, mobility, complexity = temporal_features(_sine_epoch(4.0))
    assert activity == pytest.approx(0.5, rel=0.01)
    assert mobility == pytest.approx(2.0 * np.sin(np.pi * 4.0 / 128.0), rel=0.01)
    assert mobility == pytest.approx(0.19635, rel=0.01)
    assert complexity == pytest.approx(1.0, rel=0.01)
    assert std == pytest.approx(np.sqrt(0.5), rel=0.01)
    assert abs(mean) < 1e-12


def test_zcr_of_ten_hertz_sine():
    epoch = _sine_epoch(10.0)
    rate = zero_crossing_rate(epoch.samples, 128.0)
    assert abs(rate * 30.0 - 600.0) <= 1.0


def test_zcr_ignores_exact_zeros():
    x = np.array([1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 1.0, -1.0])
    assert zero_crossing_rate(x, 1.0) == pytest.approx(3.0 / 8.0)


def test_constant_epoch_is_degenerate():
    epoch = Epoch("s", "Fp2", 0, 0.0, 128.0, np.zeros(3840))
    with pytest.raises(DegenerateSignal):
        temporal_features(epoch)


# --- spectral -------------------------------------------------------------------


def test_psd_of_zero_signal_is_zero():
    spectrum = psd(np.zeros(3840), 128.0)
    np.testing.assert_array_equal(spectrum.power, 0.0)
    assert spectrum.freqs[0] == 0.0 and spectrum.freqs[-1] == 64.0


def test_psd_concentrates_sine_power():
    spectrum = psd(_sine_epoch(10.0).samples, 128.0)
    # bin-mass oracle: compare plain sums of the density over the grid
    window = (spectrum.freqs >= 9.75) & (spectrum.freqs <= 10.25)
    assert spectrum.power[window].sum() >= 0.9 * spectrum.power.sum()


def test_psd_white_noise_is_flat():
    rng = np.random.default_rng(2024)
    spectrum = psd(rng.normal(size=3840), 128.0)
    levels = [band_power(spectrum, lo, lo + 4.0) for lo in np.arange(2.0, 62.0, 4.0)]
    assert max(levels) / min(levels) < 2.0


def test_parseval_total_power_matches_variance():
    t = np.arange(3840) / 128.0
    x = (
        np.sin(2 * np.pi * 3.0 * t)
        + 0.5 * np.sin(2 * np.pi * 11.0 * t)
        + 0.25 * np.sin(2 * np.pi * 27.0 * t)
    )
    spectrum = psd(x, 128.0)
    total = band_power(spectrum, 0.5, 45.0)
    assert total == pytest.approx(np.var(x), rel=0.05)


def test_alpha_sine_lands_in_alpha_band():
    values = spectral_features(psd(_sine_epoch(10.0).samples, 128.0))
    assert values["REL_ALPHA"] >= 0.9
    for name in ("REL_DELTA", "REL_THETA", "REL_BETA", "REL_GAMMA"):
        assert values[name] <= 0.05


def test_equal_delta_beta_sines_balance():
    t = np.arange(3840) / 128.0
    x = np.sin(2 * np.pi * 2.0 * t) + np.sin(2 * np.pi * 20.0 * t)
    values = spectral_features(psd(x, 128.0))
    assert values["REL_DELTA"] == pytest.approx(0.5, abs=0.05)
    assert values["REL_BETA"] == pytest.approx(0.5, abs=0.05)
    assert values["RATIO_DELTA_BETA"] == pytest.approx(1.0, abs=0.1)


def test_zero_spectrum_is_degenerate():
    with pytest.raises(DegenerateSignal):
        spectral_features(psd(np.zeros(3840), 128.0))


def test_relative_powers_of_canonical_bands_sum_to_one():
    rng = np.random.default_rng(7)
    values = spectral_features(psd(rng.normal(size=3840), 128.0))
    rel_sum = sum(values[f"REL_{b}"] for b in ("DELTA", "THETA", "ALPHA", "BETA", "GAMMA"))
    assert rel_sum <= 1.0 + 1e-9
    assert rel_sum == pytest.approx(1.0, abs=1e-6)


def test_slow_wave_gate():
    cfg = FeatureConfig(slow_wave_gate=True)
    quiet = _sine_epoch(1.0, amplitude=10.0)  # 20 uV swing, below the gate
    loud = _sine_epoch(1.0, amplitude=60.0)   # 120 uV swing
    assert slow_wave_gated_power(quiet, cfg) == 0.0
    assert slow_wave_gated_power(loud, cfg) > 0.0


# --- sleep ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "stages,tst,se",
    [
        (["W", "S1", "S2", "S2", "W"], 90.0, 60.0),
        (["W"] * 8, 0.0, 0.0),
        (["S2"] * 960, 28_800.0, 100.0),
    ],
)
def test_sleep_features(stages, tst, se):
    got_tst, got_se = sleep_features(Hypnogram("s", stages))
    assert got_tst == pytest.approx(tst)
    assert got_se == pytest.approx(se)


def test_hypnogram_rejects_unknown_stage():
    with pytest.raises(ValueError):
        Hypnogram("s", ["W", "N2"])


# --- extract_all ----------------------------------------------------------------


def _noise_recording(seconds=600.0, fs=128.0, seed=5, scale=20.0):
    rng = np.random.default_rng(seed)
    return Recording("subj", "Fp2", fs, scale * rng.normal(size=int(fs * seconds)))


def test_ten_minute_recording_yields_39_vectors():
    rec = _noise_recording()
    hyp = Hypnogram("subj", ["S2"] * 20)
    vectors = extract_all(rec, hyp, label="healthy")
    assert len(vectors) == 39
    for v in vectors:
        assert len(v.values) == 31
        assert all(np.isfinite(x) for x in v.values.values())
        assert v.values["SLEEP_EFFICIENCY"] == 100.0
        assert v.values["TOTAL_SLEEP_TIME"] == 600.0


def test_saturated_epoch_missing_from_output():
    rec = _noise_recording()
    t = np.arange(len(rec.samples)) / rec.fs
    burst = slice(int(100 * rec.fs), int(103 * rec.fs))
    rec.samples[burst] += 400.0 * np.sin(2 * np.pi * 10.0 * t[burst])
    hyp = Hypnogram("subj", ["S2"] * 20)
    vectors = extract_all(rec, hyp)
    indices = {v.epoch_index for v in vectors}
    assert len(vectors) < 39
    missing = set(range(39)) - indices
    assert missing and all(5 <= k <= 7 for k in missing)


def test_hypnogram_mismatch_raises():
    rec = _noise_recording(seconds=600.0)
    with pytest.raises(AlignmentError):
        extract_all(rec, Hypnogram("subj", ["S2"] * 10))


def test_class_profiles_separate_slow_wave_power():
    healthy, _ = generate_subject(make_profile("healthy", seed=3), 600.0, 128.0)
    insomnia, _ = generate_subject(make_profile("insomnia", seed=3), 600.0, 128.0)
    hyp = Hypnogram("s", ["S2"] * 20)
    mean_sw = {}
    for rec in (healthy, insomnia):
        rec.subject_id = "s"
        vectors = extract_all(rec, hyp)
        mean_sw[rec.channel + str(id(rec))] = np.mean(
            [v.values["SLOW_WAVE_POWER"] for v in vectors]
        )
    values = list(mean_sw.values())
    assert values[0] > values[1]


# --- invariance properties --------------------------------------------------------


def _random_epoch(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=3840)
    return Epoch("s", "Fp2", 0, 0.0, 128.0, x - x.mean())


SCALE_INVARIANT = (
    ["ZCR", "HJORTH_MOBILITY", "HJORTH_COMPLEXITY"]
    + [n for n in FEATURE_NAMES if n.startswith(("REL_", "RATIO_"))]
)
SCALE_QUADRATIC = ["HJORTH_ACTIVITY", "TOTAL_POWER", "SLOW_WAVE_POWER"] + [
    n for n in FEATURE_NAMES if n.startswith("ABS_")
]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 50.0))
def test_scale_equivariance(seed, scale):
    epoch = _random_epoch(seed)
    base = epoch_features(epoch)
    scaled = epoch_features(
        Epoch("s", "Fp2", 0, 0.0, 128.0, scale * epoch.samples)
    )
    for name in SCALE_INVARIANT:
        assert scaled[name] == pytest.approx(base[name], rel=1e-9)
    for name in SCALE_QUADRATIC:
        assert scaled[name] == pytest.approx(scale**2 * base[name], rel=1e-9)
    assert scaled["STD"] == pytest.approx(scale * base["STD"], rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_time_reversal_invariance(seed):
    epoch = _random_epoch(seed)
    forward = epoch_features(epoch)
    backward = epoch_features(
        Epoch("s", "Fp2", 0, 0.0, 128.0, epoch.samples[::-1].copy())
    )
    for name, value in forward.items():
        assert backward[name] == pytest.approx(value, rel=1e-9, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_relative_powers_bounded_and_ratios_positive(seed):
    values = epoch_features(_random_epoch(seed))
    for name, value in values.items():
        if name.startswith("REL_"):
            assert 0.0 <= value <= 1.0
        if name.startswith("RATIO_"):
            assert value > 0.0


# --- persistence -------------------------------------------------------------------


def test_feature_csv_round_trip(tmp_path):
    rec = _noise_recording(seconds=120.0)
    vectors = extract_all(rec, Hypnogram("subj", ["W", "S2", "S2", "REM"]), label="insomnia")
    path = tmp_path / "features.csv"
    write_feature_csv(vectors, path, comment="test")
    back = read_feature_csv(path)
    assert len(back) == len(vectors)
    for a, b in zip(vectors, back):
        assert a.subject_id == b.subject_id
        assert a.epoch_index == b.epoch_index
        assert a.label == b.label
        assert a.values == b.values  # repr round-trips floats exactly


def test_hypnogram_csv_round_trip(tmp_path):
    hyp = Hypnogram("subj", ["W", "S1", "S2", "S3", "S4", "REM", "W"])
    path = tmp_path / "hyp.csv"
    write_hypnogram(hyp, path, comment="test")
    back = read_hypnogram(path, "subj")
    assert back.stages == hyp.stages
