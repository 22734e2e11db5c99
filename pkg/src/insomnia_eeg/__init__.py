"""Insomnia screening from single-channel sleep EEG.

The library covers the full path from EDF recordings to a classifier
verdict: ingestion and resampling, band-pass conditioning, 31 per-epoch
features, statistical feature selection, a small 1D CNN trained from
scratch, and confusion-matrix metrics. A built-in synthetic-EEG generator
provides a ground-truth cohort so the whole pipeline is testable without
clinical data.
"""

__version__ = "0.1.0"
