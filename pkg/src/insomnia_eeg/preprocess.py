"""Signal conditioning ahead of feature extraction.

The chain is: band-pass filter the recording, cut it into 30 s epochs with
50 % overlap, flag epochs whose peak amplitude exceeds the artifact
threshold, and remove each kept epoch's DC offset. Rejection happens at
epoch granularity because muscle and ocular artifacts contaminate whole
windows; flagged epochs stay in the list for auditing but are excluded
downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import butter, sosfilt, sosfiltfilt

from .edf_io import Recording
from .errors import InvalidSignal, InvalidSpec, NumericalError, TooShort

DEFAULT_CLIP_UV = 260.0


@dataclass(frozen=True)
class FilterSpec:
    """Band-pass specification, realized as HP(order) followed by LP(order)."""

    hp_cutoff: float = 0.5
    lp_cutoff: float = 40.0
    order: int = 7
    zero_phase: bool = False

    def validate(self, fs: float) -> None:
        if self.order < 1:
            raise InvalidSpec(f"filter order {self.order} must be >= 1")
        if not (0.0 < self.hp_cutoff < self.lp_cutoff):
            raise InvalidSpec(
                f"cutoffs must satisfy 0 < hp ({self.hp_cutoff}) < lp ({self.lp_cutoff})"
            )
        if self.lp_cutoff >= fs / 2:
            raise InvalidSpec(
                f"low-pass cutoff {self.lp_cutoff} Hz at or above Nyquist ({fs / 2} Hz)"
            )


@dataclass(frozen=True)
class FilterCoefficients:
    """Second-order-section cascade produced by design_butterworth."""

    sos: np.ndarray
    fs: float
    spec: FilterSpec


@dataclass
class Epoch:
    """One analysis window of a recording."""

    subject_id: str
    channel: str
    index: int
    offset: float            # seconds from recording start
    fs: float
    samples: np.ndarray
    rejected: bool = False
    label: str | None = None


def design_butterworth(spec: FilterSpec, fs: float) -> FilterCoefficients:
    """Design the band-pass cascade for a given sampling rate.

    A high-pass and a low-pass Butterworth of the requested order are each
    designed by bilinear transform with prewarped cutoffs (so gain is
    exactly -3 dB at both corner frequencies) and stacked as second-order
    sections, which keeps a 7th-order design numerically well conditioned.
    """
    spec.validate(fs)
    sos_hp = butter(spec.order, spec.hp_cutoff, btype="highpass", fs=fs, output="sos")
    sos_lp = butter(spec.order, spec.lp_cutoff, btype="lowpass", fs=fs, output="sos")
    sos = np.vstack([sos_hp, sos_lp])

    for section in sos:
        poles = np.roots(section[3:])
        if np.any(np.abs(poles) >= 1.0):
            raise NumericalError("filter section has a pole on or outside the unit circle")
    return FilterCoefficients(sos=sos, fs=float(fs), spec=spec)


def apply_filter(coeffs: FilterCoefficients, samples: np.ndarray) -> np.ndarray:
    """Run the cascade over a sample buffer (length preserving)."""
    if coeffs.spec.zero_phase:
        return sosfiltfilt(coeffs.sos, samples)
    return sosfilt(coeffs.sos, samples)


def filter_signal(recording: Recording, spec: FilterSpec | None = None) -> Recording:
    """Band-pass a recording; zero_phase in the spec selects forward-backward."""
    spec = spec or FilterSpec()
    coeffs = design_butterworth(spec, recording.fs)
    return replace(recording, samples=apply_filter(coeffs, recording.samples))


def segment(
    recording: Recording, epoch_len: float = 30.0, overlap: float = 0.5
) -> list[Epoch]:
    """Cut a recording into fixed-length epochs with fractional overlap.

    Epochs start at multiples of the hop (epoch_len * (1 - overlap)); a
    trailing remainder shorter than one hop is discarded.
    """
    length = int(round(epoch_len * recording.fs))
    hop = int(round(length * (1.0 - overlap)))
    if hop < 1:
        raise InvalidSpec(f"overlap {overlap} leaves an empty hop")
    n = len(recording.samples)
    if n < length:
        raise TooShort(
            f"recording of {n} samples is shorter than one {epoch_len} s epoch"
        )
    count = (n - length) // hop + 1
    return [
        Epoch(
            subject_id=recording.subject_id,
            channel=recording.channel,
            index=k,
            offset=k * hop / recording.fs,
            fs=recording.fs,
            samples=recording.samples[k * hop : k * hop + length],
        )
        for k in range(count)
    ]


def reject_artifacts(
    epochs: list[Epoch], threshold: float = DEFAULT_CLIP_UV
) -> list[Epoch]:
    """Flag epochs whose peak magnitude strictly exceeds the threshold.

    Sample values are never modified; an epoch at exactly the threshold is
    kept. Flagged epochs remain in the returned list for audit.
    """
    return [
        replace(e, rejected=bool(np.max(np.abs(e.samples)) > threshold))
        for e in epochs
    ]


def normalize_epoch(epoch: Epoch) -> Epoch:
    """Subtract the epoch mean. No variance scaling happens at signal level."""
    if epoch.rejected:
        raise InvalidSignal(
            f"epoch {epoch.index} of {epoch.subject_id} is rejected; not normalizing"
        )
    return replace(epoch, samples=epoch.samples - np.mean(epoch.samples))


def preprocess_recording(
    recording: Recording,
    spec: FilterSpec | None = None,
    epoch_len: float = 30.0,
    overlap: float = 0.5,
    clip_uv: float = DEFAULT_CLIP_UV,
) -> list[Epoch]:
    """Full conditioning chain: filter, segment, reject, normalize kept epochs.

    Rejected epochs are returned flagged and un-normalized.
    """
    filtered = filter_signal(recording, spec)
    epochs = reject_artifacts(segment(filtered, epoch_len, overlap), clip_uv)
    return [e if e.rejected else normalize_epoch(e) for e in epochs]
