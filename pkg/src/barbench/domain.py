"""Discrete sampling domains: bar-height pairs, ratio bins, and count axes.

The ratio axis is built from integer bar heights. The shorter bar h runs
5..84 and the taller bar H runs 6..85 with h < H, which yields 3,240
(h, H) pairs and 2,081 distinct exact ratios h/H. Ratios are grouped into
94 half-open bins of width 0.01 starting at 0.055; each bin is referred to
by its midpoint (0.06, 0.07, ..., 0.99). Divided-bar charts stack both
target bars on one side, so the pair table can be restricted by a height
budget h + H <= bound (default 90), which empties the last bin and leaves
93 usable bins.

All bin membership tests use exact integer arithmetic (1000*h vs scaled
bounds times H) so that ratios sitting on a bin boundary are never
misclassified by floating-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

H_MIN, H_MAX = 6, 85          # taller bar, inclusive
SHORT_MIN, SHORT_MAX = 5, 84  # shorter bar, inclusive
N_BINS = 94
BIN_WIDTH = Fraction(1, 100)
FIRST_LOWER = Fraction(55, 1000)   # lower edge of bin 1
DIVIDED_HEIGHT_BUDGET = 90         # h + H cap for divided (Type 5) charts

CELL_COUNT_RANGE = (80, 159)
NODE_COUNT_RANGE = (20, 99)


class DomainError(ValueError):
    """Raised when a value falls outside the declared sampling domain."""


@dataclass(frozen=True, order=True)
class HeightPair:
    """An (h, H) bar-height pair with h < H, so h/H < 1."""

    h: int
    H: int

    def __post_init__(self):
        if not (SHORT_MIN <= self.h <= SHORT_MAX):
            raise DomainError(f"shorter height {self.h} outside [{SHORT_MIN}, {SHORT_MAX}]")
        if not (H_MIN <= self.H <= H_MAX):
            raise DomainError(f"taller height {self.H} outside [{H_MIN}, {H_MAX}]")
        if self.h >= self.H:
            raise DomainError(f"pair ({self.h}, {self.H}) must satisfy h < H")

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.h, self.H)

    @property
    def ratio_float(self) -> float:
        return self.h / self.H


@dataclass(frozen=True)
class RatioBin:
    """Half-open ratio interval [lower, upper) identified by its midpoint."""

    index: int  # 1..94

    @property
    def lower(self) -> Fraction:
        return FIRST_LOWER + BIN_WIDTH * (self.index - 1)

    @property
    def upper(self) -> Fraction:
        return self.lower + BIN_WIDTH

    @property
    def midpoint(self) -> float:
        # exact to 2 decimals: 0.06 for bin 1 up to 0.99 for bin 94
        return (self.index + 5) / 100

    def contains(self, ratio: Fraction) -> bool:
        return self.lower <= ratio < self.upper


def bin_of(ratio) -> RatioBin:
    """Map a ratio to the unique bin with lower <= ratio < upper.

    Accepts a Fraction, an (h, H) HeightPair, or a float. Floats are
    converted exactly via as_integer_ratio so boundary values keep the
    half-open semantics.
    """
    if isinstance(ratio, HeightPair):
        frac = ratio.ratio
    elif isinstance(ratio, Fraction):
        frac = ratio
    else:
        frac = Fraction(*float(ratio).as_integer_ratio())
    lo, hi = FIRST_LOWER, FIRST_LOWER + N_BINS * BIN_WIDTH
    if not (lo <= frac < hi):
        raise DomainError(f"ratio {ratio} outside the binned range [{float(lo)}, {float(hi)})")
    index = int((frac - FIRST_LOWER) / BIN_WIDTH) + 1
    return RatioBin(index)


@dataclass(frozen=True)
class PairTable:
    """Every (h, H) pair of the height domain, grouped by ratio bin."""

    bins: tuple[RatioBin, ...]
    pairs_by_bin: Mapping[int, tuple[HeightPair, ...]]
    all_pairs: tuple[HeightPair, ...]
    height_budget: int | None = None  # h + H cap when constrained, else None

    def pairs_in(self, bin_: RatioBin | int) -> tuple[HeightPair, ...]:
        index = bin_.index if isinstance(bin_, RatioBin) else int(bin_)
        return self.pairs_by_bin.get(index, ())

    def distinct_ratios(self) -> set[Fraction]:
        return {p.ratio for p in self.all_pairs}

    def nonempty_midpoints(self) -> list[float]:
        return [b.midpoint for b in self.bins]

    def to_csv(self, path) -> None:
        """Audit export: one row per (bin, pair) with the exact ratio."""
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_index", "midpoint", "h", "H", "exact_ratio"])
            for b in self.bins:
                for p in self.pairs_by_bin[b.index]:
                    writer.writerow([b.index, f"{b.midpoint:.2f}", p.h, p.H, str(p.ratio)])


def enumerate_pairs(type5_constrained: bool = False,
                    height_budget: int = DIVIDED_HEIGHT_BUDGET) -> PairTable:
    """Enumerate the full (h, H) pair table, optionally height-budgeted.

    Unconstrained: 3,240 pairs, 2,081 distinct ratios, 94 non-empty bins.
    With the divided-bar budget (h + H <= 90): 93 non-empty bins.
    """
    by_bin: dict[int, list[HeightPair]] = {}
    all_pairs: list[HeightPair] = []
    for taller in range(H_MIN, H_MAX + 1):
        for shorter in range(SHORT_MIN, taller):
            if type5_constrained and shorter + taller > height_budget:
                continue
            pair = HeightPair(shorter, taller)
            all_pairs.append(pair)
            by_bin.setdefault(bin_of(pair).index, []).append(pair)
    bins = tuple(RatioBin(i) for i in sorted(by_bin))
    frozen = {i: tuple(sorted(ps)) for i, ps in by_bin.items()}
    return PairTable(
        bins=bins,
        pairs_by_bin=frozen,
        all_pairs=tuple(sorted(all_pairs)),
        height_budget=height_budget if type5_constrained else None,
    )


RATIO_BIN = "ratio-bin"
TALLER_HEIGHT = "taller-height"
CELL_COUNT = "cell-count"
NODE_COUNT = "node-count"


@dataclass(frozen=True)
class DiscreteDomain:
    """A labeled, strictly increasing axis of sampling values."""

    label: str
    values: tuple[float, ...] = field(repr=False)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise DomainError(f"domain {self.label!r} values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def ratio_bin_domain(type5_constrained: bool = False,
                     height_budget: int = DIVIDED_HEIGHT_BUDGET) -> DiscreteDomain:
    """Ratio-bin midpoints: 94 values, or 93 under the divided-bar budget."""
    table = enumerate_pairs(type5_constrained, height_budget)
    return DiscreteDomain(RATIO_BIN, tuple(table.nonempty_midpoints()))


def taller_height_domain() -> DiscreteDomain:
    return DiscreteDomain(TALLER_HEIGHT, tuple(float(v) for v in range(H_MIN, H_MAX + 1)))


def cell_count_domain() -> DiscreteDomain:
    lo, hi = CELL_COUNT_RANGE
    return DiscreteDomain(CELL_COUNT, tuple(float(v) for v in range(lo, hi + 1)))


def node_count_domain() -> DiscreteDomain:
    lo, hi = NODE_COUNT_RANGE
    return DiscreteDomain(NODE_COUNT, tuple(float(v) for v in range(lo, hi + 1)))


_DOMAIN_BUILDERS = {
    RATIO_BIN: ratio_bin_domain,
    TALLER_HEIGHT: taller_height_domain,
    CELL_COUNT: cell_count_domain,
    NODE_COUNT: node_count_domain,
}


def domain_by_label(label: str, **kwargs) -> DiscreteDomain:
    try:
        builder = _DOMAIN_BUILDERS[label]
    except KeyError:
        raise DomainError(f"unknown domain label {label!r}; expected one of {sorted(_DOMAIN_BUILDERS)}")
    return builder(**kwargs)
