"""Exception hierarchy for the pipeline.

Every error the library raises deliberately derives from PipelineError so the
CLI can turn any failure into a machine-readable error line and a nonzero
exit code. Plain OSError is allowed to propagate for filesystem problems.
"""


class PipelineError(Exception):
    """Base class for all deliberate pipeline failures."""


# --- EDF ingestion ---------------------------------------------------------

class ParseError(PipelineError):
    """EDF header or payload is structurally invalid."""


class ChannelNotFound(PipelineError):
    """Requested channel label is absent from the EDF signal table."""


class BadScaling(PipelineError):
    """Signal header has a degenerate digital or physical range."""


class InvalidSignal(PipelineError):
    """Samples are unusable (empty, non-finite, or non-integral rate)."""


class UnsupportedRate(PipelineError):
    """Resampling ratio is not a small rational number."""


# --- preprocessing ---------------------------------------------------------

class InvalidSpec(PipelineError):
    """Filter specification violates its invariants for the given rate."""


class NumericalError(PipelineError):
    """A numerically unstable filter was produced (should be unreachable)."""


class TooShort(PipelineError):
    """Recording shorter than one analysis epoch."""


# --- features --------------------------------------------------------------

class DegenerateSignal(PipelineError):
    """Zero-variance or zero-power input for which a feature is undefined."""


class AlignmentError(PipelineError):
    """Hypnogram and recording cover visibly different durations."""


# --- selection -------------------------------------------------------------

class ConstantFeature(PipelineError):
    """A feature column has zero variance across the dataset."""


class InsufficientData(PipelineError):
    """Too few values or classes to compute a statistic."""


class NoFeaturesSelected(PipelineError):
    """The selection rules rejected every candidate feature."""


# --- model -----------------------------------------------------------------

class ShapeError(PipelineError):
    """Input width incompatible with the network layer plan."""


class DegenerateDataset(PipelineError):
    """Training data contains a single class."""


class NoData(PipelineError):
    """No kept epochs available for a prediction."""


class IncompatibleModel(PipelineError):
    """Model file is truncated, corrupt, or built for a different plan."""


# --- metrics ---------------------------------------------------------------

class UndefinedMetric(PipelineError):
    """Metric denominator is zero; the value is undefined, not 0."""


# --- orchestration ---------------------------------------------------------

class StageOrderError(PipelineError):
    """A pipeline stage was invoked before its upstream artifacts exist."""


class ConfigError(PipelineError):
    """Configuration file or flag violates the config schema."""
