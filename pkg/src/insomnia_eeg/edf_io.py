"""EDF (European Data Format) ingestion and writing, plus rate conversion.

EDF files carry a 256-byte ASCII header, one 256-byte ASCII header per
signal, and int16 little-endian data records. Digital values map to
physical units through a per-signal linear scaling. Only continuous EDF
is handled; EDF+ annotation channels are skipped like any other non-EEG
signal.

Fixed header layout (byte offsets):
    0..7     version            8..87    patient id
    88..167  recording id       168..175 start date 'dd.mm.yy'
    176..183 start time 'hh.mm.ss'
    184..191 header byte count  192..235 reserved
    236..243 number of records  244..251 record duration (s)
    252..255 number of signals
Signal headers are stored field-major: all labels, all transducers, ...
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import (
    BadScaling,
    ChannelNotFound,
    InvalidSignal,
    ParseError,
    UnsupportedRate,
)

PIPELINE_FS = 128.0          # analysis rate everything is resampled to
_MAX_RATIO = 10_000          # largest admissible resampling numerator/denominator
_KAISER_BETA = 7.857         # >= 80 dB stopband for the anti-alias filter


@dataclass(frozen=True)
class SignalHeader:
    """Per-signal header block of an EDF file."""

    label: str
    physical_dim: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ""
    prefiltering: str = ""

    @property
    def gain(self) -> float:
        """Physical units per digital step."""
        return (self.physical_max - self.physical_min) / (
            self.digital_max - self.digital_min
        )

    def validate(self) -> None:
        if self.digital_min >= self.digital_max:
            raise BadScaling(
                f"signal {self.label!r}: digital range "
                f"[{self.digital_min}, {self.digital_max}] is degenerate"
            )
        if self.physical_min == self.physical_max:
            raise BadScaling(f"signal {self.label!r}: physical range is degenerate")
        if not math.isfinite(self.gain) or self.gain == 0.0:
            raise BadScaling(f"signal {self.label!r}: scaling gain is not usable")
        if self.samples_per_record <= 0:
            raise ParseError(f"signal {self.label!r}: samples_per_record must be > 0")


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: datetime.date
    start_time: datetime.time
    num_records: int
    record_duration: float
    signals: list[SignalHeader] = field(default_factory=list)

    @property
    def header_bytes(self) -> int:
        return 256 * (1 + len(self.signals))


@dataclass
class Recording:
    """One channel of physically scaled EEG with its session metadata."""

    subject_id: str
    channel: str
    fs: float
    samples: np.ndarray
    start_time: datetime.time = datetime.time(0, 0, 0)

    @property
    def duration(self) -> float:
        """Length in seconds."""
        return len(self.samples) / self.fs

    def validate(self) -> None:
        if self.fs <= 0:
            raise InvalidSignal("sampling rate must be positive")
        if len(self.samples) == 0:
            raise InvalidSignal("recording has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidSignal("recording contains non-finite samples")


def _ascii(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip()


def _header_int(raw: bytes, what: str) -> int:
    try:
        return int(_ascii(raw))
    except ValueError:
        raise ParseError(f"cannot parse {what} from {raw!r}") from None


def _header_float(raw: bytes, what: str) -> float:
    try:
        return float(_ascii(raw))
    except ValueError:
        raise ParseError(f"cannot parse {what} from {raw!r}") from None


def canonical_channel(label: str) -> str:
    """Reduce an EDF channel label to its bare electrode name.

    Strips an 'EEG' prefix and a reference suffix, so 'EEG C4-A1', 'C4-A1'
    and 'c4' all canonicalise to 'C4'.
    """
    name = label.strip().upper()
    if name.startswith("EEG"):
        name = name[3:].strip(" -_")
    name = name.split("-")[0].strip()
    return name


def read_header(path: str | Path) -> EdfHeader:
    """Parse and validate the fixed plus signal headers of an EDF file."""
    path = Path(path)
    with open(path, "rb") as f:
        fixed = f.read(256)
        if len(fixed) < 256:
            raise ParseError(f"{path}: file shorter than the 256-byte EDF header")
        version = _ascii(fixed[0:8])
        if version != "0":
            raise ParseError(f"{path}: unsupported EDF version field {version!r}")
        patient_id = _ascii(fixed[8:88])
        recording_id = _ascii(fixed[88:168])
        start_date = _parse_date(_ascii(fixed[168:176]), path)
        start_time = _parse_time(_ascii(fixed[176:184]), path)
        header_bytes = _header_int(fixed[184:192], "header byte count")
        num_records = _header_int(fixed[236:244], "number of records")
        record_duration = _header_float(fixed[244:252], "record duration")
        num_signals = _header_int(fixed[252:256], "number of signals")

        if num_signals <= 0:
            raise ParseError(f"{path}: number of signals must be positive")
        if num_records < -1:
            raise ParseError(f"{path}: number of records must be >= -1")
        if record_duration <= 0:
            raise ParseError(f"{path}: record duration must be > 0")
        if header_bytes != 256 * (1 + num_signals):
            raise ParseError(
                f"{path}: header byte count {header_bytes} does not match "
                f"256 * (1 + {num_signals})"
            )

        block = f.read(256 * num_signals)
        if len(block) < 256 * num_signals:
            raise ParseError(f"{path}: truncated signal header block")

    def column(offset: int, width: int, i: int) -> bytes:
        start = offset * num_signals + width * i
        return block[start : start + width]

    signals = []
    for i in range(num_signals):
        sig = SignalHeader(
            label=_ascii(column(0, 16, i)),
            transducer=_ascii(column(16, 80, i)),
            physical_dim=_ascii(column(96, 8, i)),
            physical_min=_header_float(column(104, 8, i), "physical minimum"),
            physical_max=_header_float(column(112, 8, i), "physical maximum"),
            digital_min=_header_int(column(120, 8, i), "digital minimum"),
            digital_max=_header_int(column(128, 8, i), "digital maximum"),
            prefiltering=_ascii(column(136, 80, i)),
            samples_per_record=_header_int(column(216, 8, i), "samples per record"),
        )
        sig.validate()
        signals.append(sig)

    return EdfHeader(
        version=version,
        patient_id=patient_id,
        recording_id=recording_id,
        start_date=start_date,
        start_time=start_time,
        num_records=num_records,
        record_duration=record_duration,
        signals=signals,
    )


def _parse_date(text: str, path: Path) -> datetime.date:
    try:
        day, month, year = (int(p) for p in text.split("."))
    except ValueError:
        raise ParseError(f"{path}: bad start date field {text!r}") from None
    year += 1900 if year >= 85 else 2000
    return datetime.date(year, month, day)


def _parse_time(text: str, path: Path) -> datetime.time:
    try:
        hour, minute, second = (int(p) for p in text.split("."))
        return datetime.time(hour, minute, second)
    except ValueError:
        raise ParseError(f"{path}: bad start time field {text!r}") from None


def read_edf(path: str | Path, channel_label: str) -> Recording:
    """Load one channel of an EDF file as a physically scaled Recording.

    Channel matching is case-insensitive and ignores referential montage
    suffixes, so asking for 'Fp2' finds a signal labelled 'Fp2-F4'.

    Raises ParseError for malformed files, ChannelNotFound when no signal
    matches, and BadScaling for degenerate scaling ranges.
    """
    path = Path(path)
    header = read_header(path)

    target = canonical_channel(channel_label)
    index = None
    for i, sig in enumerate(header.signals):
        if canonical_channel(sig.label) == target:
            index = i
            break
    if index is None:
        labels = [s.label for s in header.signals]
        raise ChannelNotFound(
            f"{path}: channel {channel_label!r} not among {labels}"
        )

    spr = [s.samples_per_record for s in header.signals]
    record_words = sum(spr)
    with open(path, "rb") as f:
        f.seek(header.header_bytes)
        raw = np.fromfile(f, dtype="<i2")

    num_records = header.num_records
    if num_records == -1:
        num_records = len(raw) // record_words
    if len(raw) < num_records * record_words:
        raise ParseError(
            f"{path}: payload holds {len(raw)} samples, header promises "
            f"{num_records * record_words}"
        )
    raw = raw[: num_records * record_words].reshape(num_records, record_words)

    offset = sum(spr[:index])
    sig = header.signals[index]
    digital = raw[:, offset : offset + sig.samples_per_record].reshape(-1)
    physical = (digital.astype(np.float64) - sig.digital_min) * sig.gain + sig.physical_min

    fs = sig.samples_per_record / header.record_duration
    subject_id = header.patient_id or path.stem
    return Recording(
        subject_id=subject_id,
        channel=channel_label,
        fs=fs,
        samples=physical,
        start_time=header.start_time,
    )


def _fit8(value: float) -> str:
    """Render a float into EDF's 8-character ASCII numeric field."""
    for fmt in ("{:.3f}", "{:.6g}", "{:.2e}"):
        text = fmt.format(value)
        if len(text) <= 8:
            return text
    raise InvalidSignal(f"value {value!r} cannot be encoded in 8 characters")


def write_edf(
    recording: Recording,
    path: str | Path,
    *,
    start_date: datetime.date = datetime.date(2000, 1, 1),
) -> None:
    """Write a single-channel recording as a continuous EDF file.

    The sampling rate must be an integer number of samples per second
    (records are one second long); a final partial record is padded with
    physical zeros. The physical range is chosen symmetric around zero so
    quantisation error stays within one scaling LSB.
    """
    recording.validate()
    fs = recording.fs
    if abs(fs - round(fs)) > 1e-9:
        raise InvalidSignal(f"sampling rate {fs} is not an integer per-second rate")
    spr = int(round(fs))

    samples = np.asarray(recording.samples, dtype=np.float64)
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak == 0.0:
        peak = 1.0
    # The header fields are the source of truth for the scaling, so encode
    # the symmetric range first and derive the gain from the re-parsed text.
    max_text = _fit8(math.ceil(peak * 1000.0) / 1000.0)
    min_text = _fit8(-float(max_text))
    phys_max = float(max_text)
    phys_min = float(min_text)
    dig_min, dig_max = -32768, 32767
    gain = (phys_max - phys_min) / (dig_max - dig_min)

    num_records = math.ceil(len(samples) / spr)
    padded = np.zeros(num_records * spr, dtype=np.float64)
    padded[: len(samples)] = samples
    digital = np.clip(
        np.round((padded - phys_min) / gain + dig_min), dig_min, dig_max
    ).astype("<i2")

    def pad(text: str, width: int) -> bytes:
        return text[:width].ljust(width).encode("ascii")

    header = b"".join(
        [
            pad("0", 8),
            pad(recording.subject_id, 80),
            pad("", 80),
            pad(start_date.strftime("%d.%m.%y"), 8),
            pad(recording.start_time.strftime("%H.%M.%S"), 8),
            pad(str(256 * 2), 8),
            pad("", 44),
            pad(str(num_records), 8),
            pad("1", 8),
            pad("1", 4),
            # signal header block (field-major, one signal)
            pad(recording.channel, 16),
            pad("", 80),
            pad("uV", 8),
            pad(min_text, 8),
            pad(max_text, 8),
            pad(str(dig_min), 8),
            pad(str(dig_max), 8),
            pad("", 80),
            pad(str(spr), 8),
            pad("", 32),
        ]
    )
    assert len(header) == 512

    path = Path(path)
    with open(path, "wb") as f:
        f.write(header)
        digital.tofile(f)


def resample(recording: Recording, target_fs: float) -> Recording:
    """Band-limited rational resampling to target_fs.

    Uses polyphase filtering with a Kaiser-windowed sinc anti-alias filter
    (cutoff at half the lower of the two rates, >= 80 dB stopband). The
    conversion ratio must reduce to p/q with p, q <= 10,000.
    """
    if target_fs <= 0:
        raise UnsupportedRate(f"target rate {target_fs} must be positive")
    recording.validate()
    if abs(target_fs - recording.fs) < 1e-12 * max(target_fs, recording.fs):
        return replace(recording, samples=recording.samples.copy())

    ratio = Fraction(target_fs).limit_denominator(_MAX_RATIO) / Fraction(
        recording.fs
    ).limit_denominator(_MAX_RATIO)
    up, down = ratio.numerator, ratio.denominator
    if up > _MAX_RATIO or down > _MAX_RATIO:
        raise UnsupportedRate(
            f"ratio {recording.fs} -> {target_fs} needs {up}/{down}, "
            f"beyond {_MAX_RATIO}"
        )

    out = resample_poly(recording.samples, up, down, window=("kaiser", _KAISER_BETA))
    return replace(recording, fs=float(target_fs), samples=out)
