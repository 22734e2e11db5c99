"""Confusion-matrix metrics. The positive class is insomnia.

Zero-denominator cases raise UndefinedMetric rather than returning 0, so
degenerate splits cannot silently inflate a report; the CLI renders such
cells as the string 'undefined'.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UndefinedMetric


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        counts = (self.tp, self.tn, self.fp, self.fn)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative confusion counts: {counts}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def _require_total(self) -> None:
        if self.total == 0:
            raise UndefinedMetric("empty confusion matrix")


def accuracy(cm: ConfusionMatrix) -> float:
    cm._require_total()
    return (cm.tp + cm.tn) / cm.total


def precision(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fp == 0:
        raise UndefinedMetric("no positive predictions; precision undefined")
    return cm.tp / (cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0:
        raise UndefinedMetric("no positive ground truth; recall undefined")
    return cm.tp / (cm.tp + cm.fn)


def f1(cm: ConfusionMatrix) -> float:
    p = precision(cm)
    r = recall(cm)
    if p + r == 0.0:
        raise UndefinedMetric("precision + recall is zero; F1 undefined")
    return 2.0 * p * r / (p + r)


def cohens_kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement between predictions and ground truth."""
    cm._require_total()
    total = cm.total
    p_observed = (cm.tp + cm.tn) / total
    p_expected = (
        (cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)
    ) / (total * total)
    if p_expected == 1.0:
        raise UndefinedMetric("chance agreement is 1; kappa undefined")
    return (p_observed - p_expected) / (1.0 - p_expected)
