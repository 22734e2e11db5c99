"""Synthetic overnight EEG with class-conditional spectral profiles.

This is a verification oracle, not a sleep simulator: every recording is a
sum of per-band sinusoids (one frequency and phase drawn per 30 s block)
plus white noise, so each band's expected power is known analytically from
the profile amplitudes. Healthy profiles put most power in the slow-wave
and delta range and sleep efficiently; insomnia profiles shift power into
beta/gamma and spend far more of the night awake. Those contrasts make the
classes separable by construction, which is what end-to-end pipeline tests
need.

All randomness derives from the profile seed; per-subject seeds within a
cohort come from a splitmix64 stream over the cohort seed.
"""

from __future__ import annotations

import csv
import datetime
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .edf_io import Recording, write_edf
from .features import CANONICAL_BANDS, Hypnogram, write_hypnogram

BLOCK_SECONDS = 30.0
_SYNTH_BANDS = ("slow_wave", "delta", "theta", "alpha", "sigma", "beta", "gamma")
_CHANNEL_STREAM = {"Fp2": 1, "C4": 2}


@dataclass(frozen=True)
class SubjectProfile:
    label: str                        # 'healthy' or 'insomnia'
    band_amplitudes: dict[str, float]
    slow_wave_fraction: float
    sleep_efficiency_target: float    # percent
    noise_sigma: float
    seed: int

    def validate(self) -> None:
        if self.label not in ("healthy", "insomnia"):
            raise ValueError(f"unknown class {self.label!r}")
        if any(a < 0 for a in self.band_amplitudes.values()):
            raise ValueError("band amplitudes must be non-negative")
        if not (0.0 <= self.slow_wave_fraction <= 1.0):
            raise ValueError("slow_wave_fraction out of [0, 1]")
        if not (0.0 <= self.sleep_efficiency_target <= 100.0):
            raise ValueError("sleep efficiency target out of [0, 100]")


def splitmix64(state: int) -> int:
    """One step of the splitmix64 stream; returns the next 64-bit value."""
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(base: int, *streams: int) -> int:
    """Deterministic child seed from a base seed and stream indices."""
    value = base & 0xFFFFFFFFFFFFFFFF
    for stream in streams:
        value = splitmix64(value ^ (stream & 0xFFFFFFFFFFFFFFFF))
    return value


def load_default_profiles() -> dict:
    """Amplitude tables shipped with the package (overridable via JSON file)."""
    text = resources.files("insomnia_eeg.data").joinpath("default_profiles.json").read_text()
    return json.loads(text)


def make_profile(
    label: str, seed: int, profiles: dict | None = None, se_jitter: float | None = None
) -> SubjectProfile:
    """Instantiate a profile for one subject, jittering its sleep efficiency.

    The jitter keeps per-subject sleep parameters from being identical
    across a cohort while preserving the class contrast.
    """
    table = (profiles or load_default_profiles())[label]
    jitter = table.get("sleep_efficiency_jitter", 0.0) if se_jitter is None else se_jitter
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(seed, 99)))
    target = float(table["sleep_efficiency_target"]) + rng.uniform(-jitter, jitter)
    profile = SubjectProfile(
        label=label,
        band_amplitudes={k: float(v) for k, v in table["band_amplitudes"].items()},
        slow_wave_fraction=float(table["slow_wave_fraction"]),
        sleep_efficiency_target=float(np.clip(target, 0.0, 100.0)),
        noise_sigma=float(table["noise_sigma"]),
        seed=seed,
    )
    profile.validate()
    return profile


def _draw_hypnogram(
    profile: SubjectProfile, n_epochs: int, rng: np.random.Generator, subject_id: str
) -> Hypnogram:
    n_wake = int(round(n_epochs * (1.0 - profile.sleep_efficiency_target / 100.0)))
    n_wake = min(max(n_wake, 0), n_epochs)
    stages = np.empty(n_epochs, dtype=object)
    wake_at = rng.choice(n_epochs, size=n_wake, replace=False)
    stages[wake_at] = "W"
    swf = profile.slow_wave_fraction
    rem = 0.22
    s1 = 0.10
    s2 = max(1.0 - swf - rem - s1, 0.0)
    weights = np.array([s1, s2, swf / 2.0, swf / 2.0, rem])
    weights = weights / weights.sum()
    asleep = [i for i in range(n_epochs) if stages[i] is None]
    drawn = rng.choice(["S1", "S2", "S3", "S4", "REM"], size=len(asleep), p=weights)
    for i, stage in zip(asleep, drawn):
        stages[i] = stage
    return Hypnogram(subject_id=subject_id, stages=list(stages))


def generate_subject(
    profile: SubjectProfile,
    duration: float = 3600.0,
    fs: float = 256.0,
    channel: str = "Fp2",
    subject_id: str | None = None,
) -> tuple[Recording, Hypnogram]:
    """One subject's recording and matching hypnogram, fully seeded.

    The signal is a per-block mixture: for every 30 s block and every band,
    a frequency is drawn uniformly from the band range and a sinusoid with
    the profile amplitude is added, plus white Gaussian noise. The
    hypnogram hits the profile's sleep-efficiency target up to rounding.
    """
    profile.validate()
    if duration < 60.0:
        raise ValueError(f"duration {duration} s is too short (need >= 60 s)")
    subject_id = subject_id or f"synth-{profile.label}-{profile.seed:x}"

    # The hypnogram belongs to the subject, not the probe: its stream must
    # not depend on the channel so Fp2 and C4 share identical sleep data.
    hyp_rng = np.random.default_rng(np.random.SeedSequence(derive_seed(profile.seed, 50)))
    n_epochs = int(duration // BLOCK_SECONDS)
    hypnogram = _draw_hypnogram(profile, n_epochs, hyp_rng, subject_id)

    stream = _CHANNEL_STREAM.get(channel, 7)
    rng = np.random.default_rng(np.random.SeedSequence(derive_seed(profile.seed, stream)))

    n_samples = int(round(duration * fs))
    block_len = int(round(BLOCK_SECONDS * fs))
    samples = rng.normal(0.0, profile.noise_sigma, size=n_samples)
    t_block = np.arange(block_len) / fs
    for start in range(0, n_samples, block_len):
        stop = min(start + block_len, n_samples)
        t = t_block[: stop - start]
        for band in _SYNTH_BANDS:
            amplitude = profile.band_amplitudes.get(band, 0.0)
            lo, hi = CANONICAL_BANDS[band]
            freq = rng.uniform(lo, min(hi, 0.45 * fs))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            if amplitude > 0.0:
                samples[start:stop] += amplitude * np.sin(2.0 * np.pi * freq * t + phase)

    recording = Recording(
        subject_id=subject_id,
        channel=channel,
        fs=float(fs),
        samples=samples,
        start_time=datetime.time(23, 0, 0),
    )
    return recording, hypnogram


MANIFEST_COLUMNS = ("subject_id", "label", "edf_fp2", "edf_c4", "hypnogram", "seed")


def generate_cohort(
    n_healthy: int,
    n_insomnia: int,
    seed: int,
    out_dir: str | Path,
    duration: float = 3600.0,
    fs: float = 256.0,
    channels: tuple[str, ...] = ("Fp2", "C4"),
    profiles: dict | None = None,
    comment: str | None = None,
) -> Path:
    """Write a cohort of EDF recordings, hypnograms and a manifest CSV.

    Returns the manifest path. Per-subject seeds derive from the cohort
    seed, so the whole cohort is reproducible from (counts, seed).
    """
    if n_healthy < 1 or n_insomnia < 1:
        raise ValueError("cohort needs at least one subject per class")
    bad = [c for c in channels if c not in _CHANNEL_STREAM]
    if bad or not channels:
        raise ValueError(f"unknown channels {bad}; expected a subset of Fp2/C4")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = profiles or load_default_profiles()

    rows = []
    roster = [("healthy", i) for i in range(n_healthy)] + [
        ("insomnia", i) for i in range(n_insomnia)
    ]
    for label, i in roster:
        subject_id = f"{'h' if label == 'healthy' else 'i'}{i + 1:03d}"
        subject_seed = derive_seed(seed, 0 if label == "healthy" else 1, i)
        profile = make_profile(label, subject_seed, profiles)

        paths = {"edf_fp2": "", "edf_c4": ""}
        hyp_path = out_dir / f"{subject_id}_hypnogram.csv"
        hypnogram = None
        for channel in channels:
            recording, hypnogram = generate_subject(
                profile, duration, fs, channel, subject_id
            )
            edf_path = out_dir / f"{subject_id}_{channel.lower()}.edf"
            write_edf(recording, edf_path)
            paths[f"edf_{channel.lower()}"] = edf_path.name
        write_hypnogram(hypnogram, hyp_path, comment=comment)
        rows.append(
            {
                "subject_id": subject_id,
                "label": label,
                "edf_fp2": paths["edf_fp2"],
                "edf_c4": paths["edf_c4"],
                "hypnogram": hyp_path.name,
                "seed": subject_seed,
            }
        )

    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return manifest


def read_manifest(path: str | Path) -> list[dict]:
    """Rows of a cohort manifest; relative paths resolve against the CSV."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    rows = list(csv.DictReader(lines))
    for row in rows:
        for key in ("edf_fp2", "edf_c4", "hypnogram"):
            if row.get(key):
                candidate = Path(row[key])
                if not candidate.is_absolute():
                    row[key] = str(path.parent / candidate)
    return rows
