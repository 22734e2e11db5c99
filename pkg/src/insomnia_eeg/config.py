"""Run configuration: JSON file keys, CLI overrides, and the config hash.

Every key can live in a JSON config file and be overridden by a CLI flag.
The config hash recorded in output headers covers only analysis-affecting
keys (not paths), so reruns of the same analysis in different directories
produce byte-identical artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

CHANNEL_KEYS = ("fp2", "c4", "both")
CHANNEL_LABELS = {"fp2": "Fp2", "c4": "C4"}

#: Per-channel default learning rates used when `lr` is not set.
DEFAULT_LEARNING_RATE = {"fp2": 3e-4, "c4": 2e-4, "both": 3e-4}

#: Keys excluded from the config hash because they name filesystem
#: locations rather than analysis parameters.
_PATH_KEYS = ("manifest", "out", "profiles")


@dataclass
class PipelineConfig:
    manifest: str | None = None
    out: str = "out"
    channel: str = "fp2"
    seed: int = 0
    jobs: int = 1

    # ingestion / preprocessing
    resample_fs: float = 128.0
    hp: float = 0.5
    lp: float = 40.0
    order: int = 7
    zero_phase: bool = False
    clip_uv: float = 260.0
    epoch_seconds: float = 30.0
    overlap: float = 0.5

    # features
    sigma_lo: float = 12.0
    sigma_hi: float = 16.0
    slow_wave_gate: bool = False

    # selection
    alpha_top: float = 0.05
    p_optimal: float = 0.70
    r_top: float = 0.5
    r_optimal: float = 0.3
    curated_set: bool = False
    per_subject_means: bool = False

    # training
    lr: float | None = None
    max_epochs: int = 100
    patience: int = 10
    split: float = 0.70
    epoch_split: bool = False
    shuffle_labels: bool = False

    # synthesis
    synth_healthy: int = 10
    synth_insomnia: int = 10
    synth_duration: float = 3600.0
    synth_fs: float = 256.0
    synth_channels: str = "fp2,c4"
    profiles: str | None = None

    def validate(self) -> None:
        if self.channel not in CHANNEL_KEYS:
            raise ConfigError(f"channel must be one of {CHANNEL_KEYS}, got {self.channel!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for key in ("resample_fs", "epoch_seconds", "clip_uv", "synth_duration", "synth_fs"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if not (0.0 <= self.overlap < 1.0):
            raise ConfigError("overlap must be in [0, 1)")
        self.synth_channel_labels()  # raises on bad channel names

    def channel_labels(self) -> list[str]:
        """EDF channel names this run operates on."""
        if self.channel == "both":
            return [CHANNEL_LABELS["fp2"], CHANNEL_LABELS["c4"]]
        return [CHANNEL_LABELS[self.channel]]

    def synth_channel_labels(self) -> list[str]:
        labels = []
        for key in self.synth_channels.split(","):
            key = key.strip().lower()
            if not key:
                continue
            if key not in CHANNEL_LABELS:
                raise ConfigError(f"unknown synth channel {key!r}")
            labels.append(CHANNEL_LABELS[key])
        if not labels:
            raise ConfigError("synth_channels must name at least one channel")
        return labels

    def learning_rate(self) -> float:
        return self.lr if self.lr is not None else DEFAULT_LEARNING_RATE[self.channel]

    def config_hash(self) -> str:
        payload = {
            k: v
            for k, v in dataclasses.asdict(self).items()
            if k not in _PATH_KEYS
        }
        canonical = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, value):
    if value is None:
        return None
    hint = _FIELD_TYPES[name].type
    try:
        if hint.startswith("bool"):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if hint.startswith("int"):
            return int(value)
        if hint.startswith("float"):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r}: cannot interpret {value!r}") from None


def load_config(
    config_path: str | Path | None = None, overrides: dict | None = None
) -> PipelineConfig:
    """Defaults, then JSON file values, then non-None CLI overrides."""
    values: dict = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")

    cfg = PipelineConfig(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg
