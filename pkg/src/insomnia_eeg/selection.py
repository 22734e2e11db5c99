"""Statistical feature selection.

Each feature column is compared between the two classes with an unequal-
variance two-sample t-test, a two-tailed p-value, and the point-biserial
correlation with the class label. Two conjunction rules then grade each
feature:

  top      |t| > t_crit(alpha) and p < alpha      and |r| >= r_top
  optimal  |t| > t_crit(alpha) and p < p_optimal  and |r| >= r_optimal

The selected set is the union of both tiers in canonical feature order.
A curated 20-feature list is available as a fixed alternative for
modeling runs that should not depend on the dataset at hand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import betainc
from scipy.stats import t as student_t

from .errors import ConstantFeature, InsufficientData, NoFeaturesSelected
from .features import FEATURE_NAMES, FeatureVector

#: Hand-curated high-relevance subset (4 relative powers, total and
#: slow-wave power, 8 band ratios, 4 temporal, 2 sleep), in canonical order.
CURATED_FEATURES = (
    "MEAN",
    "ZCR",
    "HJORTH_MOBILITY",
    "HJORTH_COMPLEXITY",
    "TOTAL_POWER",
    "SLOW_WAVE_POWER",
    "REL_DELTA",
    "REL_SIGMA",
    "REL_BETA",
    "REL_GAMMA",
    "RATIO_DELTA_THETA",
    "RATIO_DELTA_ALPHA",
    "RATIO_DELTA_GAMMA",
    "RATIO_DELTA_BETA",
    "RATIO_THETA_ALPHA",
    "RATIO_THETA_BETA",
    "RATIO_ALPHA_GAMMA",
    "RATIO_ALPHA_BETA",
    "SLEEP_EFFICIENCY",
    "TOTAL_SLEEP_TIME",
)


@dataclass(frozen=True)
class SelectionConfig:
    alpha_top: float = 0.05
    p_optimal: float = 0.70
    r_top: float = 0.5
    r_optimal: float = 0.3
    use_curated_set: bool = False

    def validate(self) -> None:
        if not (0.0 < self.alpha_top <= self.p_optimal <= 1.0):
            raise ValueError("need 0 < alpha_top <= p_optimal <= 1")
        if not (0.0 <= self.r_optimal <= self.r_top <= 1.0):
            raise ValueError("need 0 <= r_optimal <= r_top <= 1")


@dataclass
class FeatureStats:
    feature_name: str
    t_stat: float
    dof: float
    p_value: float
    r_pb: float
    tier: str = "rejected"


@dataclass
class NormParams:
    """Column means/stds fitted on one dataset, reusable on another."""

    means: dict[str, float]
    stds: dict[str, float]
    constant_features: tuple[str, ...] = ()


def _matrix(vectors: list[FeatureVector]) -> np.ndarray:
    return np.array(
        [[v.values[name] for name in FEATURE_NAMES] for v in vectors], dtype=np.float64
    )


def znormalize(
    vectors: list[FeatureVector],
    params: NormParams | None = None,
    strict: bool = False,
) -> tuple[list[FeatureVector], NormParams]:
    """Scale every feature column to zero mean and unit standard deviation.

    When `params` is given they are applied unchanged, so held-out vectors
    can be normalized with training-set statistics. Zero-variance columns
    are flagged in the returned params and only centered (strict=True
    raises ConstantFeature instead).
    """
    if len(vectors) < 2 and params is None:
        raise InsufficientData("need at least 2 vectors to fit normalization")
    if params is None:
        data = _matrix(vectors)
        means = data.mean(axis=0)
        stds = data.std(axis=0)
        constant = tuple(
            name for name, s in zip(FEATURE_NAMES, stds) if s == 0.0
        )
        if constant and strict:
            raise ConstantFeature(f"zero-variance features: {list(constant)}")
        params = NormParams(
            means={n: float(m) for n, m in zip(FEATURE_NAMES, means)},
            stds={n: float(s) for n, s in zip(FEATURE_NAMES, stds)},
            constant_features=constant,
        )
    normalized = []
    for vec in vectors:
        values = {}
        for name in FEATURE_NAMES:
            std = params.stds[name]
            centred = vec.values[name] - params.means[name]
            values[name] = centred / std if std > 0.0 else centred
        normalized.append(
            FeatureVector(vec.subject_id, vec.epoch_index, vec.label, values)
        )
    return normalized, params


def welch_t(group_a: np.ndarray, group_b: np.ndarray) -> tuple[float, float]:
    """Unequal-variance two-sample t statistic and its effective dof."""
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientData("each group needs at least two values")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InsufficientData("groups contain non-finite values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    denom_sq = va + vb
    diff = a.mean() - b.mean()
    if denom_sq == 0.0:
        # Both groups constant: no evidence either way if the means agree.
        t = 0.0 if diff == 0.0 else float(np.sign(diff)) * np.inf
        return t, float(len(a) + len(b) - 2)
    t = diff / np.sqrt(denom_sq)
    dof = denom_sq**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(t), float(dof)


def p_value(t: float, dof: float) -> float:
    """Two-tailed tail probability of Student's t.

    Uses the identity P(|T| > t) = I_x(dof/2, 1/2) with x = dof/(dof+t^2),
    where I is the regularized incomplete beta function.
    """
    if dof <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {dof}")
    if not np.isfinite(t):
        return 0.0
    x = dof / (dof + t * t)
    return float(betainc(dof / 2.0, 0.5, x))


def point_biserial(feature: np.ndarray, labels: np.ndarray) -> float:
    """Pearson correlation between a feature and the binary class (0/1)."""
    x = np.asarray(feature, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise InsufficientData("both classes must be present")
    if x.var() == 0.0:
        raise InsufficientData("feature has zero variance")
    return float(np.corrcoef(x, y)[0, 1])


def compute_feature_stats(
    vectors: list[FeatureVector],
    positive_label: str = "insomnia",
    per_subject_means: bool = False,
) -> list[FeatureStats]:
    """t / p / correlation for each of the 31 features, pooled by class.

    The default unit of analysis is the epoch; per_subject_means collapses
    each subject to its mean feature row first.
    """
    labelled = [v for v in vectors if v.label is not None]
    if per_subject_means:
        labelled = _subject_mean_rows(labelled)
    labels = np.array(
        [1.0 if v.label == positive_label else 0.0 for v in labelled]
    )
    if len(np.unique(labels)) < 2:
        raise InsufficientData("both classes must be present")
    data = _matrix(labelled)

    stats = []
    for j, name in enumerate(FEATURE_NAMES):
        column = data[:, j]
        if column.std() == 0.0:
            stats.append(FeatureStats(name, np.nan, np.nan, np.nan, np.nan))
            continue
        t, dof = welch_t(column[labels == 0.0], column[labels == 1.0])
        stats.append(
            FeatureStats(
                feature_name=name,
                t_stat=t,
                dof=dof,
                p_value=p_value(t, dof),
                r_pb=point_biserial(column, labels),
            )
        )
    return stats


def _subject_mean_rows(vectors: list[FeatureVector]) -> list[FeatureVector]:
    by_subject: dict[str, list[FeatureVector]] = {}
    for v in vectors:
        by_subject.setdefault(v.subject_id, []).append(v)
    rows = []
    for subject in sorted(by_subject):
        group = by_subject[subject]
        values = {
            name: float(np.mean([g.values[name] for g in group]))
            for name in FEATURE_NAMES
        }
        rows.append(FeatureVector(subject, 0, group[0].label, values))
    return rows


def apply_rules(
    stats: list[FeatureStats], cfg: SelectionConfig | None = None
) -> list[str]:
    """Grade every feature and return the selected names in canonical order.

    Mutates each FeatureStats.tier in place. With use_curated_set the
    returned list is the fixed curated set regardless of the computed
    tiers (which are still filled in for reporting).
    """
    cfg = cfg or SelectionConfig()
    cfg.validate()
    for s in stats:
        s.tier = "rejected"
        if not np.isfinite(s.dof) or s.dof <= 0:
            continue
        t_crit = float(student_t.ppf(1.0 - cfg.alpha_top / 2.0, s.dof))
        significant = abs(s.t_stat) > t_crit
        if significant and s.p_value < cfg.alpha_top and abs(s.r_pb) >= cfg.r_top:
            s.tier = "top"
        elif significant and s.p_value < cfg.p_optimal and abs(s.r_pb) >= cfg.r_optimal:
            s.tier = "optimal"

    if cfg.use_curated_set:
        return [name for name in FEATURE_NAMES if name in CURATED_FEATURES]

    by_name = {s.feature_name: s for s in stats}
    selected = [
        name
        for name in FEATURE_NAMES
        if name in by_name and by_name[name].tier in ("top", "optimal")
    ]
    if not selected:
        raise NoFeaturesSelected("every feature was rejected by the selection rules")
    return selected


# --- persistence -------------------------------------------------------------

def write_feature_stats(
    stats: list[FeatureStats], path: str | Path, comment: str | None = None
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        writer = csv.writer(f)
        writer.writerow(["feature", "t", "dof", "p", "r_pb", "tier"])
        for s in stats:
            writer.writerow(
                [s.feature_name, repr(s.t_stat), repr(s.dof), repr(s.p_value),
                 repr(s.r_pb), s.tier]
            )


def write_selected(names: list[str], path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        if comment:
            f.write(f"# {comment}\n")
        for name in names:
            f.write(name + "\n")


def read_selected(path: str | Path) -> list[str]:
    names = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                names.append(line)
    return names
