"""Error metrics and the statistical procedures used on prediction tables.

Predictions are aggregated by (h, H) pair first, each aggregate acting as
one independent trial; factor effects are then tested with one-way
fixed-effect ANOVA, post-hoc Tukey HSD letter groups, and Cohen's eta
squared for practical significance. MLAE is computed on the percent scale,
log2(|error in percent| + 1/8), summarized by the midmean (the mean of
the middle 50% after dropping floor(n/4) values from each end).

The F and studentized-range distributions come from scipy; the sums of
squares, pairwise comparisons, letter grouping, Pearson correlation, and
LOWESS smoother are implemented here and cross-checked in the tests
against scipy/statsmodels equivalents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats as sps

ETA2_THRESHOLDS = ((0.14, "large"), (0.06, "medium"), (0.01, "small"))


class AnalysisError(ValueError):
    """Raised for empty or degenerate analysis inputs."""


@dataclass(frozen=True)
class PredictionRecord:
    """One model inference joined to its ground truth and provenance."""

    image_id: str
    h: int | None
    H: int | None
    truth: float
    prediction: float
    run_id: str = ""
    method: str = ""
    level: str = ""
    chart_type: int | None = None

    def __post_init__(self):
        if not 0.0 < self.truth < 1.0:
            raise AnalysisError(f"truth {self.truth} outside (0, 1) for {self.image_id}")

    @property
    def abs_error(self) -> float:
        return abs(self.prediction - self.truth)


def mae(records) -> float:
    """Mean absolute error over prediction records."""
    errors = [r.abs_error for r in records]
    if not errors:
        raise AnalysisError("mae needs at least one record")
    return float(np.mean(errors))


def midmean(values) -> float:
    """Mean of the middle 50%: drop floor(n/4) values from each sorted end."""
    ordered = sorted(values)
    if not ordered:
        raise AnalysisError("midmean needs at least one value")
    k = len(ordered) // 4
    trimmed = ordered[k: len(ordered) - k] if k else ordered
    return float(np.mean(trimmed))


def log_absolute_error(truth: float, prediction: float) -> float:
    """log2 of the percent-scale absolute error plus 1/8."""
    return math.log2(abs(prediction * 100.0 - truth * 100.0) + 0.125)


def mlae(records) -> float:
    """Midmean of the per-record log absolute errors (percent scale).

    Perfect predictions score exactly -3 (log2 of the 1/8 offset); an
    error of 7/8 of a percent scores exactly 0.
    """
    if not records:
        raise AnalysisError("mlae needs at least one record")
    return midmean(log_absolute_error(r.truth, r.prediction) for r in records)


def aggregate_by_pair(records) -> dict[tuple[int, int], float]:
    """Mean absolute error per distinct (h, H) pair, one trial each."""
    if not records:
        raise AnalysisError("aggregate_by_pair needs at least one record")
    sums: dict[tuple[int, int], list[float]] = {}
    for r in records:
        sums.setdefault((r.h, r.H), []).append(r.abs_error)
    return {pair: float(np.mean(errs)) for pair, errs in sorted(sums.items())}


def classify_eta2(eta2: float) -> str:
    for threshold, label in ETA2_THRESHOLDS:
        if eta2 >= threshold:
            return label
    return "none"


@dataclass
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    p_value: float
    eta2: float
    effect_label: str
    groups: list[list[str]] = field(default_factory=list)  # Tukey letter groups, best mean first
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {
            "F": self.f_stat, "df_between": self.df_between, "df_within": self.df_within,
            "p": self.p_value, "eta2": self.eta2, "effect": self.effect_label,
            "groups": self.groups, "degenerate": self.degenerate,
        }


def _validate_groups(trials_by_level: dict) -> dict[str, np.ndarray]:
    if len(trials_by_level) < 2:
        raise AnalysisError("need at least two factor levels")
    clean = {}
    for level, values in trials_by_level.items():
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size < 2:
            raise AnalysisError(f"level {level!r} needs at least two trials")
        clean[str(level)] = arr
    return clean


def anova_oneway(trials_by_level: dict) -> AnovaResult:
    """Classical one-way fixed-effect F test with eta squared."""
    groups = _validate_groups(trials_by_level)
    all_values = np.concatenate(list(groups.values()))
    grand = all_values.mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in groups.values())
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups.values())
    ss_total = ss_between + ss_within
    df_between = len(groups) - 1
    df_within = all_values.size - len(groups)
    if ss_within <= 0.0:
        # all values identical within groups: F is undefined or infinite
        return AnovaResult(
            f_stat=float("nan") if ss_between <= 0 else float("inf"),
            df_between=df_between, df_within=df_within,
            p_value=float("nan") if ss_between <= 0 else 0.0,
            eta2=0.0 if ss_total <= 0 else ss_between / ss_total,
            effect_label="degenerate", degenerate=True,
        )
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    f_stat = ms_between / ms_within
    p = float(sps.f.sf(f_stat, df_between, df_within))
    eta2 = float(ss_between / ss_total)
    return AnovaResult(f_stat=float(f_stat), df_between=df_between, df_within=df_within,
                       p_value=p, eta2=eta2, effect_label=classify_eta2(eta2))


@dataclass
class PairwiseComparison:
    level_a: str
    level_b: str
    mean_diff: float
    p_value: float
    significant: bool


def tukey_hsd(trials_by_level: dict, alpha: float = 0.05) -> tuple[list[PairwiseComparison], list[list[str]]]:
    """Tukey (Kramer) pairwise comparisons and compact letter groups.

    Returns the comparisons and a partition into groups so that any two
    levels sharing a group are not significantly different. Groups are
    sorted by their best (lowest) group mean.
    """
    groups = _validate_groups(trials_by_level)
    labels = list(groups)
    df_within = sum(len(g) for g in groups.values()) - len(groups)
    ms_within = sum(((g - g.mean()) ** 2).sum() for g in groups.values()) / df_within
    if ms_within <= 0:
        # no within-group variance: any mean difference separates levels
        comparisons = []
        for a, b in combinations(labels, 2):
            diff = float(groups[a].mean() - groups[b].mean())
            comparisons.append(PairwiseComparison(a, b, diff, 0.0 if diff != 0 else 1.0, diff != 0))
        return comparisons, _letter_groups(labels, groups, comparisons)
    k = len(labels)
    comparisons = []
    for a, b in combinations(labels, 2):
        ga, gb = groups[a], groups[b]
        diff = float(ga.mean() - gb.mean())
        se = math.sqrt(ms_within / 2.0 * (1.0 / len(ga) + 1.0 / len(gb)))
        q = abs(diff) / se
        p = float(sps.studentized_range.sf(q, k, df_within))
        comparisons.append(PairwiseComparison(a, b, diff, p, p < alpha))
    return comparisons, _letter_groups(labels, groups, comparisons)


def _letter_groups(labels, groups, comparisons) -> list[list[str]]:
    """Maximal cliques of the not-significantly-different graph."""
    ok = {frozenset((c.level_a, c.level_b)): not c.significant for c in comparisons}

    def compatible(members, candidate):
        return all(ok.get(frozenset((m, candidate)), True) for m in members)

    cliques: list[set[str]] = []
    # grow from each label in mean order; dedupe and drop dominated cliques
    order = sorted(labels, key=lambda lab: groups[lab].mean())
    for start in order:
        clique = {start}
        for lab in order:
            if lab not in clique and compatible(clique, lab):
                clique.add(lab)
        if clique not in cliques:
            cliques.append(clique)
    maximal = [c for c in cliques if not any(c < other for other in cliques)]
    maximal.sort(key=lambda c: min(groups[lab].mean() for lab in c))
    return [sorted(c, key=lambda lab: groups[lab].mean()) for c in maximal]


def pearson(x, y) -> float:
    """Product-moment correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 3:
        raise AnalysisError("pearson needs two equal-length vectors with >= 3 entries")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc ** 2).sum()) * float((yc ** 2).sum()))
    if denom == 0.0:
        raise AnalysisError("pearson undefined for zero-variance input")
    return float((xc * yc).sum() / denom)


@dataclass
class ConsistencyMatrix:
    axis: list[str]
    r: np.ndarray

    def as_dict(self) -> dict:
        return {"axis": self.axis, "r": self.r.tolist()}


def consistency_matrix(series_by_label: dict) -> ConsistencyMatrix:
    """Pearson correlations between aligned prediction series.

    series_by_label maps an axis label (a downsampling level, an observer)
    to a mapping key -> value; correlations use the keys common to each
    label pair.
    """
    labels = list(series_by_label)
    n = len(labels)
    r = np.eye(n)
    for i, j in combinations(range(n), 2):
        a, b = series_by_label[labels[i]], series_by_label[labels[j]]
        common = sorted(set(a) & set(b))
        if len(common) < 3:
            raise AnalysisError(f"labels {labels[i]!r}/{labels[j]!r} share fewer than 3 keys")
        rij = pearson([a[k] for k in common], [b[k] for k in common])
        r[i, j] = r[j, i] = rij
    return ConsistencyMatrix(axis=labels, r=r)


def lowess(x, y, bandwidth: float = 2.0 / 3.0):
    """Single-pass locally weighted linear regression with tricube weights.

    For each x, fits a weighted line over the int(bandwidth * n) nearest
    points and evaluates it there. Returns the smoothed y at the input x
    order.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 5:
        raise AnalysisError("lowess needs at least five points")
    k = max(2, int(bandwidth * n))
    smoothed = np.empty(n)
    for i in range(n):
        d = np.abs(x - x[i])
        idx = np.argsort(d, kind="stable")[:k]
        h = d[idx].max()
        if h == 0.0:
            smoothed[i] = y[idx].mean()
            continue
        w = np.clip(d / h, 0.0, 1.0)
        w = (1.0 - w ** 3) ** 3
        w[d > h] = 0.0
        sw, swx = w.sum(), (w * x).sum()
        swy, swxy, swxx = (w * y).sum(), (w * x * y).sum(), (w * x * x).sum()
        det = sw * swxx - swx * swx
        if det <= 1e-12 * max(sw * swxx, 1e-300):
            smoothed[i] = swy / sw
            continue
        slope = (sw * swxy - swx * swy) / det
        intercept = (swy - slope * swx) / sw
        smoothed[i] = intercept + slope * x[i]
    return smoothed


def confidence_interval_95(values) -> tuple[float, float]:
    """Mean +/- t(0.975, n-1) times the standard error."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size < 2:
        raise AnalysisError("confidence interval needs at least two values")
    mean = arr.mean()
    se = arr.std(ddof=1) / math.sqrt(arr.size)
    t = float(sps.t.ppf(0.975, arr.size - 1))
    return float(mean - t * se), float(mean + t * se)
