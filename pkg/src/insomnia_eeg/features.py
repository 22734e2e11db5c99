"""Per-epoch feature extraction: 31 candidate features per kept epoch.

Temporal (6): mean, population standard deviation, zero-crossing rate in
crossings per second, and the three second-order time-domain descriptors
computed from first differences (activity = variance, mobility =
sqrt(var(dx)/var(x)), complexity = mobility(dx)/mobility(x)).

Spectral (23): total power over 0.5-45 Hz, slow-wave power over 0.5-2 Hz,
relative power of the six canonical bands, absolute power of five bands,
and ten pairwise band-power ratios. Band powers integrate a Welch power
spectral density (4 s Hann segments, 50 % overlap) with the trapezoid
rule, so powers are in signal-units squared.

Sleep (2): total sleep time and sleep efficiency from the hypnogram,
broadcast to every epoch of the recording.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt, welch

from .edf_io import Recording
from .errors import AlignmentError, DegenerateSignal, ParseError
from .preprocess import Epoch, normalize_epoch, reject_artifacts, segment

RATIO_EPS = 1e-12  # floor for ratio denominators, in uV^2

SLEEP_STAGES = ("W", "S1", "S2", "S3", "S4", "REM")


@dataclass(frozen=True)
class BandDef:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 64.0):
            raise ValueError(f"band {self.name}: [{self.lo}, {self.hi}] out of range")


#: Canonical analysis bands. The spindle band (sigma) overlaps alpha/beta
#: and is excluded from the relative-power sum; slow_wave is a sub-band of
#: delta used only for the slow-wave power feature.
CANONICAL_BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "sigma": (12.0, 16.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 45.0),
    "slow_wave": (0.5, 2.0),
}

TOTAL_BAND = (0.5, 45.0)

TEMPORAL_FEATURES = (
    "MEAN",
    "STD",
    "ZCR",
    "HJORTH_ACTIVITY",
    "HJORTH_MOBILITY",
    "HJORTH_COMPLEXITY",
)

SPECTRAL_FEATURES = (
    "TOTAL_POWER",
    "SLOW_WAVE_POWER",
    "REL_DELTA",
    "REL_THETA",
    "REL_ALPHA",
    "REL_SIGMA",
    "REL_BETA",
    "REL_GAMMA",
    "ABS_DELTA",
    "ABS_THETA",
    "ABS_ALPHA",
    "ABS_BETA",
    "ABS_GAMMA",
    "RATIO_DELTA_THETA",
    "RATIO_DELTA_ALPHA",
    "RATIO_DELTA_GAMMA",
    "RATIO_DELTA_BETA",
    "RATIO_THETA_ALPHA",
    "RATIO_THETA_GAMMA",
    "RATIO_THETA_BETA",
    "RATIO_ALPHA_GAMMA",
    "RATIO_ALPHA_BETA",
    "RATIO_GAMMA_BETA",
)

SLEEP_FEATURES = ("SLEEP_EFFICIENCY", "TOTAL_SLEEP_TIME")

#: Canonical ordering of all 31 features; CSV columns and model inputs
#: follow this order.
FEATURE_NAMES = TEMPORAL_FEATURES + SPECTRAL_FEATURES + SLEEP_FEATURES

_RATIO_PAIRS = (
    ("delta", "theta"),
    ("delta", "alpha"),
    ("delta", "gamma"),
    ("delta", "beta"),
    ("theta", "alpha"),
    ("theta", "gamma"),
    ("theta", "beta"),
    ("alpha", "gamma"),
    ("alpha", "beta"),
    ("gamma", "beta"),
)


@dataclass(frozen=True)
class FeatureConfig:
    """Knobs for the spectral feature computations."""

    sigma_lo: float = 12.0
    sigma_hi: float = 16.0
    #: When set, slow-wave power is only counted if the 0.5-2 Hz filtered
    #: epoch swings more than slow_wave_gate_uv peak-to-peak; otherwise the
    #: plain 0.5-2 Hz band power is always used.
    slow_wave_gate: bool = False
    slow_wave_gate_uv: float = 75.0

    def bands(self) -> list[BandDef]:
        defs = []
        for name, (lo, hi) in CANONICAL_BANDS.items():
            if name == "sigma":
                lo, hi = self.sigma_lo, self.sigma_hi
            defs.append(BandDef(name, lo, hi))
        return defs


@dataclass
class FeatureVector:
    subject_id: str
    epoch_index: int
    label: str | None
    values: dict[str, float]

    def validate(self) -> None:
        missing = [n for n in FEATURE_NAMES if n not in self.values]
        if missing or len(self.values) != len(FEATURE_NAMES):
            raise ValueError(f"feature vector must hold exactly {FEATURE_NAMES}")
        bad = [n for n, v in self.values.items() if not np.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite features: {bad}")


@dataclass
class Hypnogram:
    subject_id: str
    stages: list[str]
    epoch_seconds: float = 30.0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("hypnogram has no stages")
        if self.epoch_seconds <= 0:
            raise ValueError("epoch_seconds must be positive")
        unknown = sorted(set(self.stages) - set(SLEEP_STAGES))
        if unknown:
            raise ValueError(f"unknown sleep stages: {unknown}")

    @property
    def duration(self) -> float:
        return len(self.stages) * self.epoch_seconds


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectral density on a uniform frequency grid."""

    freqs: np.ndarray
    power: np.ndarray


def zero_crossing_rate(samples: np.ndarray, fs: float) -> float:
    """Sign changes per second; exact zeros are transparent, not crossings."""
    nonzero = samples[samples != 0.0]
    if nonzero.size < 2:
        return 0.0
    signs = np.signbit(nonzero)
    crossings = int(np.count_nonzero(signs[1:] != signs[:-1]))
    return crossings / (len(samples) / fs)


def temporal_features(epoch: Epoch) -> tuple[float, float, float, float, float, float]:
    """(mean, std, zcr, activity, mobility, complexity) of one kept epoch."""
    x = np.asarray(epoch.samples, dtype=np.float64)
    var = float(np.var(x))
    if var <= 0.0:
        raise DegenerateSignal(
            f"epoch {epoch.index} of {epoch.subject_id} has zero variance"
        )
    dx = np.diff(x)
    d2x = np.diff(dx)
    var_dx = float(np.var(dx))
    var_d2x = float(np.var(d2x))
    mobility = np.sqrt(var_dx / var)
    if var_dx <= 0.0:
        raise DegenerateSignal("first difference has zero variance")
    complexity = np.sqrt(var_d2x / var_dx) / mobility
    return (
        float(np.mean(x)),
        float(np.std(x)),
        zero_crossing_rate(x, epoch.fs),
        var,
        float(mobility),
        float(complexity),
    )


def psd(samples: np.ndarray, fs: float) -> Spectrum:
    """Welch power spectral density: 4 s Hann segments, 50 % overlap.

    At the 128 Hz pipeline rate this gives 0.25 Hz resolution on a 0-64 Hz
    grid and satisfies discrete Parseval (integral equals variance) for
    band-limited signals.
    """
    nperseg = min(len(samples), int(round(4 * fs)))
    # Symmetric (not periodic) Hann keeps the estimate exactly invariant
    # under time reversal of the epoch.
    freqs, power = welch(
        samples,
        fs=fs,
        window=np.hanning(nperseg),
        nperseg=nperseg,
        noverlap=nperseg // 2,
        detrend="constant",
        scaling="density",
    )
    return Spectrum(freqs=freqs, power=power)


def band_power(spectrum: Spectrum, lo: float, hi: float) -> float:
    """Trapezoidal integral of the density over [lo, hi]."""
    mask = (spectrum.freqs >= lo) & (spectrum.freqs <= hi)
    if np.count_nonzero(mask) < 2:
        return 0.0
    return float(np.trapezoid(spectrum.power[mask], spectrum.freqs[mask]))


def spectral_features(
    spectrum: Spectrum, cfg: FeatureConfig | None = None
) -> dict[str, float]:
    """The 23 spectral features from a PSD covering 0-64 Hz."""
    cfg = cfg or FeatureConfig()
    bands = {b.name: (b.lo, b.hi) for b in cfg.bands()}

    total = band_power(spectrum, *TOTAL_BAND)
    if total < RATIO_EPS:
        raise DegenerateSignal("total spectral power is zero")

    absolute = {name: band_power(spectrum, lo, hi) for name, (lo, hi) in bands.items()}
    out: dict[str, float] = {
        "TOTAL_POWER": total,
        "SLOW_WAVE_POWER": absolute["slow_wave"],
    }
    for name in ("delta", "theta", "alpha", "sigma", "beta", "gamma"):
        out[f"REL_{name.upper()}"] = absolute[name] / total
    for name in ("delta", "theta", "alpha", "beta", "gamma"):
        out[f"ABS_{name.upper()}"] = absolute[name]
    for num, den in _RATIO_PAIRS:
        out[f"RATIO_{num.upper()}_{den.upper()}"] = absolute[num] / max(
            absolute[den], RATIO_EPS
        )
    return out


def slow_wave_gated_power(epoch: Epoch, cfg: FeatureConfig) -> float:
    """Slow-wave power admitted only when the 0.5-2 Hz component is large.

    The epoch is zero-phase filtered to the slow-wave band; if its
    peak-to-peak swing does not exceed the gate threshold the feature is 0.
    """
    sos = butter(4, CANONICAL_BANDS["slow_wave"], btype="bandpass", fs=epoch.fs, output="sos")
    narrow = sosfiltfilt(sos, epoch.samples)
    if np.ptp(narrow) <= cfg.slow_wave_gate_uv:
        return 0.0
    return band_power(psd(np.asarray(epoch.samples, float), epoch.fs), *CANONICAL_BANDS["slow_wave"])


def sleep_features(hypnogram: Hypnogram) -> tuple[float, float]:
    """(total sleep time in seconds, sleep efficiency in percent)."""
    n = len(hypnogram.stages)
    asleep = sum(1 for s in hypnogram.stages if s != "W")
    tst = asleep * hypnogram.epoch_seconds
    se = 100.0 * asleep / n
    return tst, se


def epoch_features(epoch: Epoch, cfg: FeatureConfig | None = None) -> dict[str, float]:
    """All 29 per-epoch features (temporal + spectral) of one kept epoch."""
    cfg = cfg or FeatureConfig()
    mean, std, zcr, activity, mobility, complexity = temporal_features(epoch)
    values = {
        "MEAN": mean,
        "STD": std,
        "ZCR": zcr,
        "HJORTH_ACTIVITY": activity,
        "HJORTH_MOBILITY": mobility,
        "HJORTH_COMPLEXITY": complexity,
    }
    spectrum = psd(np.asarray(epoch.samples, dtype=np.float64), epoch.fs)
    values.update(spectral_features(spectrum, cfg))
    if cfg.slow_wave_gate:
        values["SLOW_WAVE_POWER"] = slow_wave_gated_power(epoch, cfg)
    return values


def extract_all(
    recording: Recording,
    hypnogram: Hypnogram,
    label: str | None = None,
    epoch_len: float = 30.0,
    overlap: float = 0.5,
    clip_uv: float = 260.0,
    cfg: FeatureConfig | None = None,
) -> list[FeatureVector]:
    """Feature vectors for every kept epoch of a preprocessed recording.

    The recording must already be filtered and at the pipeline rate; this
    runs segmentation, artifact rejection and DC normalization, then the
    per-epoch features, and broadcasts the two recording-level sleep
    features to each epoch.
    """
    n_rec_epochs = recording.duration / hypnogram.epoch_seconds
    if abs(n_rec_epochs - len(hypnogram.stages)) > 1.0:
        raise AlignmentError(
            f"{recording.subject_id}: recording covers {n_rec_epochs:.1f} hypnogram "
            f"epochs but the hypnogram has {len(hypnogram.stages)}"
        )
    cfg = cfg or FeatureConfig()
    tst, se = sleep_features(hypnogram)

    epochs = reject_artifacts(segment(recording, epoch_len, overlap), clip_uv)
    vectors = []
    for epoch in epochs:
        if epoch.rejected:
            continue
        values = epoch_features(normalize_epoch(epoch), cfg)
        values["SLEEP_EFFICIENCY"] = se
        values["TOTAL_SLEEP_TIME"] = tst
        vec = FeatureVector(
            subject_id=recording.subject_id,
            epoch_index=epoch.index,
            label=label,
            values={name: values[name] for name in FEATURE_NAMES},
        )
        vec.validate()
        vectors.append(vec)
    return vectors


# --- CSV persistence ---------------------------------------------------------

CSV_COLUMNS = ("subject_id", "epoch_index", "label") + FEATURE_NAMES


def write_feature_csv(
    vectors: list[FeatureVector], path: str | Path, comment: str | None = None
) -> None:
    """Write feature vectors as UTF-8 CSV with the canonical 34 columns."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for vec in vectors:
            writer.writerow(
                [vec.subject_id, vec.epoch_index, vec.label or ""]
                + [repr(vec.values[name]) for name in FEATURE_NAMES]
            )


def read_feature_csv(path: str | Path) -> list[FeatureVector]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [line for line in f if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ParseError(f"{path}: unexpected feature CSV header")
    vectors = []
    for row in reader:
        if not row:
            continue
        values = {name: float(v) for name, v in zip(FEATURE_NAMES, row[3:])}
        vectors.append(
            FeatureVector(
                subject_id=row[0],
                epoch_index=int(row[1]),
                label=row[2] or None,
                values=values,
            )
        )
    return vectors


def write_hypnogram(hypnogram: Hypnogram, path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        f.write("epoch_index,stage\n")
        for i, stage in enumerate(hypnogram.stages):
            f.write(f"{i},{stage}\n")


def read_hypnogram(path: str | Path, subject_id: str | None = None) -> Hypnogram:
    """Read `epoch_index,stage` lines; a header row and # comments are skipped."""
    stages = []
    with open(path, newline="", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            index, _, stage = line.partition(",")
            if index.strip().lower() == "epoch_index":
                continue
            stages.append(stage.strip())
    return Hypnogram(subject_id=subject_id or Path(path).stem, stages=stages)
