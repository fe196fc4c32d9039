"""Holdout splits, the four training-selection methods, and sample distance.

The selection pipeline has three steps. Step 1 holds out test and
validation values (20% each) by seeded simple random sampling; the rest is
the training pool. Step 2 picks m pool values by one of four methods:

    IID  seeded uniform sampling without replacement (the baseline),
    COV  greedy farthest-point coverage, seeded at the pool extremes,
    ADV  the m pool values farthest from the test set,
    OOD  the m smallest pool values (or largest, for the mirrored side).

Step 3 downsamples a plan by truncating its selection order, so a 3.75%
plan is always a prefix of the 30% plan it came from.

COV, ADV, and OOD are deterministic functions of (pool, test); ties on a
distance criterion resolve to the smaller value. IID uses a PCG64 stream
so a recorded seed replays the exact draw order on any platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .domain import DiscreteDomain

GENERATOR_NAME = "pcg64"

IID = "IID"
COV = "COV"
ADV = "ADV"
OOD_LEFT = "OOD-left"
OOD_RIGHT = "OOD-right"
IID_LARGE = "IID-LARGE"
METHODS = (IID, COV, ADV, OOD_LEFT, OOD_RIGHT, IID_LARGE)

# Downsampling levels: fraction of the domain size, as exact integer ratios.
# 94-bin ratio axis -> 28/14/7/3 selected values; 80-value axes -> 24/12/6/3.
LEVELS = ("30%", "15%", "7.5%", "3.75%")
_LEVEL_FRACTIONS = {"30%": (3, 10), "15%": (3, 20), "7.5%": (3, 40), "3.75%": (3, 80)}


@dataclass(frozen=True)
class DownsampleLevel:
    label: str
    count: int

    @staticmethod
    def for_domain(label: str, domain_size: int) -> "DownsampleLevel":
        num, den = _LEVEL_FRACTIONS[label]
        return DownsampleLevel(label, domain_size * num // den)


def level_counts(domain_size: int) -> dict[str, int]:
    return {lab: DownsampleLevel.for_domain(lab, domain_size).count for lab in LEVELS}


@dataclass(frozen=True)
class Split:
    """Disjoint test/validation/pool partition of one domain."""

    domain_label: str
    test: tuple[float, ...]
    validation: tuple[float, ...]
    pool: tuple[float, ...]
    seed: int

    def __post_init__(self):
        members = set(self.test) | set(self.validation) | set(self.pool)
        if len(members) != len(self.test) + len(self.validation) + len(self.pool):
            raise ValueError("split parts must be pairwise disjoint")

    def as_dict(self) -> dict:
        return {
            "domain": self.domain_label,
            "seed": self.seed,
            "test": list(self.test),
            "validation": list(self.validation),
            "pool": list(self.pool),
        }


@dataclass(frozen=True)
class SamplingPlan:
    """A training-selection record: method, m, and the ordered picks."""

    method: str
    target: str
    m: int
    order: tuple[float, ...]
    split: Split
    seed: int | None = None  # None for the deterministic methods

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise ValueError("selection order contains duplicates")
        pool = set(self.split.pool)
        if not set(self.order) <= pool:
            raise ValueError("selection order contains values outside the pool")
        if len(self.order) != self.m:
            raise ValueError(f"|order| = {len(self.order)} but m = {self.m}")

    def values(self) -> tuple[float, ...]:
        return self.order

    def to_json(self, indent: int | None = 2) -> str:
        doc = {
            "method": self.method,
            "target": self.target,
            "generator": GENERATOR_NAME,
            "seed": self.seed,
            "m": self.m,
            "order": list(self.order),
            "split": self.split.as_dict(),
        }
        return json.dumps(doc, indent=indent)

    @staticmethod
    def from_json(text: str) -> "SamplingPlan":
        doc = json.loads(text)
        split = Split(
            domain_label=doc["split"]["domain"],
            test=tuple(doc["split"]["test"]),
            validation=tuple(doc["split"]["validation"]),
            pool=tuple(doc["split"]["pool"]),
            seed=doc["split"]["seed"],
        )
        return SamplingPlan(
            method=doc["method"],
            target=doc["target"],
            m=doc["m"],
            order=tuple(doc["order"]),
            split=split,
            seed=doc["seed"],
        )


def _holdout_size(n: int) -> int:
    # round-half-up of 20%: 94 -> 19 (so 19/19/56), 80 -> 16 (16/16/48)
    return (2 * n + 5) // 10


def split_holdout(domain: DiscreteDomain, seed: int) -> Split:
    """Draw test then validation without replacement; the rest is the pool."""
    if len(domain) < 10:
        raise ValueError(f"domain {domain.label!r} too small to split ({len(domain)} values)")
    values = list(domain.values)
    k = _holdout_size(len(values))
    rng = np.random.Generator(np.random.PCG64(seed))
    test_idx = rng.choice(len(values), size=k, replace=False)
    test = sorted(values[i] for i in test_idx)
    taken = set(test)
    remaining = [v for v in values if v not in taken]
    val_idx = rng.choice(len(remaining), size=k, replace=False)
    validation = sorted(remaining[i] for i in val_idx)
    taken |= set(validation)
    pool = [v for v in remaining if v not in taken]
    return Split(domain.label, tuple(test), tuple(validation), tuple(pool), seed)


def sample_iid(split: Split, m: int, seed: int) -> SamplingPlan:
    """Uniform sample without replacement from the pool; order = draw order."""
    if m > len(split.pool):
        raise ValueError(f"m = {m} exceeds pool size {len(split.pool)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.choice(len(split.pool), size=m, replace=False)
    order = tuple(split.pool[i] for i in idx)
    method = IID_LARGE if m == len(split.pool) else IID
    return SamplingPlan(method, split.domain_label, m, order, split, seed)


def sample_iid_large(split: Split, seed: int) -> SamplingPlan:
    """Use the entire pool (the no-subsampling baseline)."""
    return sample_iid(split, len(split.pool), seed)


def sample_cov(split: Split, m: int) -> SamplingPlan:
    """Greedy farthest-point coverage of the pool.

    The first two picks are the pool minimum and maximum; each later pick
    maximizes the minimum distance to everything already selected. Ties
    resolve to the smaller value.
    """
    pool = sorted(split.pool)
    if m < 2:
        raise ValueError("coverage sampling needs m >= 2 (both pool extremes)")
    if m > len(pool):
        raise ValueError(f"m = {m} exceeds pool size {len(pool)}")
    order = [pool[0], pool[-1]]
    selected = set(order)
    mindist = {v: min(abs(v - order[0]), abs(v - order[1])) for v in pool}
    while len(order) < m:
        best = None
        best_d = -1.0
        for v in pool:  # ascending scan, strict > keeps the smaller value on ties
            if v in selected:
                continue
            if mindist[v] > best_d:
                best, best_d = v, mindist[v]
        order.append(best)
        selected.add(best)
        for v in pool:
            d = abs(v - best)
            if d < mindist[v]:
                mindist[v] = d
    return SamplingPlan(COV, split.domain_label, m, tuple(order), split)


def distance_to_test(value: float, test: Sequence[float], aggregate: str = "min") -> float:
    """Distance from one value to the test set: nearest sample by default.

    aggregate="sum" totals the distances over all test samples instead; the
    nearest-sample form is the committed behavior.
    """
    if aggregate == "min":
        return min(abs(value - t) for t in test)
    if aggregate == "sum":
        return sum(abs(value - t) for t in test)
    raise ValueError(f"unknown aggregate {aggregate!r}")


def sample_adv(split: Split, m: int, aggregate: str = "min") -> SamplingPlan:
    """The m pool values farthest from the test set, farthest first."""
    if not split.test:
        raise ValueError("adversarial sampling needs a non-empty test set")
    if m > len(split.pool):
        raise ValueError(f"m = {m} exceeds pool size {len(split.pool)}")
    ranked = sorted(split.pool, key=lambda v: (-distance_to_test(v, split.test, aggregate), v))
    return SamplingPlan(ADV, split.domain_label, m, tuple(ranked[:m]), split)


def sample_ood(split: Split, m: int, side: str = "left") -> SamplingPlan:
    """Shifted selection: the m smallest pool values ascending (side="left")
    or the m largest descending (side="right")."""
    if m > len(split.pool):
        raise ValueError(f"m = {m} exceeds pool size {len(split.pool)}")
    ordered = sorted(split.pool)
    if side == "left":
        order = tuple(ordered[:m])
        method = OOD_LEFT
    elif side == "right":
        order = tuple(reversed(ordered[-m:]))
        method = OOD_RIGHT
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return SamplingPlan(method, split.domain_label, m, order, split)


def make_plan(method: str, split: Split, m: int, seed: int) -> SamplingPlan:
    """Dispatch by method name; seed is ignored by the deterministic methods."""
    if method == IID:
        return sample_iid(split, m, seed)
    if method == IID_LARGE:
        return sample_iid_large(split, seed)
    if method == COV:
        return sample_cov(split, m)
    if method == ADV:
        return sample_adv(split, m)
    if method == OOD_LEFT:
        return sample_ood(split, m, "left")
    if method == OOD_RIGHT:
        return sample_ood(split, m, "right")
    raise ValueError(f"unknown sampling method {method!r}")


def downsample(plan: SamplingPlan, level: DownsampleLevel) -> SamplingPlan:
    """Truncate the selection order to its first level.count picks."""
    if level.count > len(plan.order):
        raise ValueError(f"level {level.label} wants {level.count} values, plan has {len(plan.order)}")
    return replace(plan, m=level.count, order=plan.order[: level.count])


def training_test_distance(train: Iterable[float], test: Iterable[float]) -> float:
    """Mean over test values of the distance to the nearest training value."""
    train = list(train)
    test = list(test)
    if not train or not test:
        raise ValueError("training-test distance needs non-empty train and test sets")
    return float(np.mean([min(abs(t - s) for s in train) for t in test]))
