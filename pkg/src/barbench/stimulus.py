"""Deterministic 100x100 bar-chart rasters and dataset materialization.

Five chart layouts, following Cleveland and McGill:

    1 adjacent          ten grouped bars; targets are two adjacent bars
    2 aligned-stacked   two stacks; targets are both bottom segments
    3 separated         ten grouped bars; targets sit in different groups
    4 unaligned-stacked two stacks; targets are the second segments
    5 divided           one stack carries both targets, stacked together

Grouped charts use 8 px bars with a 1 px gap inside a group and a 10 px
gap between groups; stacked charts use 30 px bars with a 20 px group gap.
Each target carries a single black marker pixel: 3 px above the bar
bottom for grouped bars, segment center for stacked bars. Bars are 1 px
black outlines on white; non-target heights are drawn uniformly from
[5, 85] clipped to whatever still fits the canvas. Everything an image
depends on is derived from a per-image seed, so datasets regenerate
byte-for-byte from their manifest regardless of worker count.

Which bar slots hold the targets is a fixed convention of this renderer
(recorded in the manifest), with the shorter target always left of or
below the taller one.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .domain import (
    DIVIDED_HEIGHT_BUDGET,
    DomainError,
    HeightPair,
    PairTable,
    RatioBin,
    bin_of,
)
from .seeds import stable_seed

MANIFEST_FORMAT = "barbench-dataset/1"

CHART_TYPE_NAMES = {
    1: "adjacent",
    2: "aligned-stacked",
    3: "separated",
    4: "unaligned-stacked",
    5: "divided",
}
GROUPED_TYPES = (1, 3)
STACKED_TYPES = (2, 4, 5)

WHITE, BLACK = 255, 0
DISTRACTOR_MIN, DISTRACTOR_MAX = 5, 85


class RenderError(RuntimeError):
    """Raised when a record cannot be drawn inside the canvas."""


@dataclass(frozen=True)
class Appearance:
    """Fixed drawing constants, recorded per dataset."""

    canvas: tuple[int, int] = (100, 100)  # width, height
    grouped_bar_width: int = 8
    within_group_gap: int = 1
    between_group_gap: int = 10
    bars_per_group: int = 5
    stacked_bar_width: int = 30
    stacked_group_gap: int = 20
    segments_per_stack: int = 4
    grouped_dot_offset: int = 3  # px above the bar bottom, horizontally centered
    background: int = WHITE
    stroke: int = BLACK

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_APPEARANCE = Appearance()


@dataclass(frozen=True)
class StimulusRecord:
    """One renderable chart: target pair, truth, and the distractor seed."""

    image_id: str
    chart_type: int
    pair: HeightPair
    bin_midpoint: float
    truth: float
    distractor_seed: int
    split_role: str

    def __post_init__(self):
        if self.chart_type not in CHART_TYPE_NAMES:
            raise ValueError(f"unknown chart type {self.chart_type}")
        if abs(self.truth - self.pair.ratio_float) > 1e-12:
            raise ValueError(f"truth {self.truth} does not match pair {self.pair}")


def _draw_outlined_rect(canvas: np.ndarray, top: int, bottom: int, left: int, right: int,
                        stroke: int) -> None:
    # inclusive pixel bounds; interior stays background-colored
    canvas[top, left:right + 1] = stroke
    canvas[bottom, left:right + 1] = stroke
    canvas[top:bottom + 1, left] = stroke
    canvas[top:bottom + 1, right] = stroke


def _grouped_bar_lefts(app: Appearance) -> list[int]:
    group_w = app.bars_per_group * app.grouped_bar_width + (app.bars_per_group - 1) * app.within_group_gap
    total = 2 * group_w + app.between_group_gap
    margin = (app.canvas[0] - total) // 2
    lefts = []
    for g in range(2):
        x = margin + g * (group_w + app.between_group_gap)
        for _ in range(app.bars_per_group):
            lefts.append(x)
            x += app.grouped_bar_width + app.within_group_gap
    return lefts


def _stack_lefts(app: Appearance) -> list[int]:
    total = 2 * app.stacked_bar_width + app.stacked_group_gap
    margin = (app.canvas[0] - total) // 2
    return [margin, margin + app.stacked_bar_width + app.stacked_group_gap]


# Fixed target slots. Grouped: bar index among the ten bars (0-based,
# left to right). Stacked: (stack index, segment index from the bottom).
GROUPED_TARGET_SLOTS = {1: (1, 2), 3: (1, 6)}
STACKED_TARGET_SLOTS = {
    2: ((0, 0), (1, 0)),
    4: ((0, 1), (1, 1)),
    5: ((0, 1), (0, 2)),
}


def _fill_heights(slots: int, fixed: dict[int, int], budget: int | None,
                  rng: np.random.Generator, context: str) -> list[int]:
    """Assign the non-fixed slot heights uniformly, honoring a total budget."""
    heights = [0] * slots
    for i, v in fixed.items():
        heights[i] = v
    free = [i for i in range(slots) if i not in fixed]
    remaining = None if budget is None else budget - sum(fixed.values())
    for n_left, i in zip(range(len(free), 0, -1), free):
        cap = DISTRACTOR_MAX
        if remaining is not None:
            cap = min(cap, remaining - DISTRACTOR_MIN * (n_left - 1))
        if cap < DISTRACTOR_MIN:
            raise RenderError(f"{context}: segments cannot fit the canvas")
        h = int(rng.integers(DISTRACTOR_MIN, cap + 1))
        heights[i] = h
        if remaining is not None:
            remaining -= h
    return heights


def render(record: StimulusRecord, appearance: Appearance = DEFAULT_APPEARANCE) -> np.ndarray:
    """Rasterize one record to a (height, width) uint8 array."""
    app = appearance
    width, height = app.canvas
    canvas = np.full((height, width), app.background, dtype=np.uint8)
    baseline = height - 1
    rng = np.random.Generator(np.random.PCG64(record.distractor_seed))
    h, taller = record.pair.h, record.pair.H
    ctx = f"{record.image_id} type={record.chart_type} pair=({h},{taller})"

    if record.chart_type in GROUPED_TYPES:
        lefts = _grouped_bar_lefts(app)
        slot_short, slot_tall = GROUPED_TARGET_SLOTS[record.chart_type]
        fixed = {slot_short: h, slot_tall: taller}
        heights = _fill_heights(len(lefts), fixed, None, rng, ctx)
        if max(heights) > height:
            raise RenderError(f"{ctx}: bar exceeds canvas")
        for left, bar_h in zip(lefts, heights):
            top = baseline - bar_h + 1
            _draw_outlined_rect(canvas, top, baseline, left, left + app.grouped_bar_width - 1, app.stroke)
        for slot in (slot_short, slot_tall):
            dot_col = lefts[slot] + app.grouped_bar_width // 2
            canvas[baseline - app.grouped_dot_offset, dot_col] = app.stroke
        return canvas

    # stacked layouts
    stacks = _stack_lefts(app)
    targets = STACKED_TARGET_SLOTS[record.chart_type]
    fixed_by_stack: list[dict[int, int]] = [{}, {}]
    (s0, seg0), (s1, seg1) = targets
    fixed_by_stack[s0][seg0] = h
    fixed_by_stack[s1][seg1] = taller
    segment_heights = []
    for stack_idx in range(2):
        segment_heights.append(
            _fill_heights(app.segments_per_stack, fixed_by_stack[stack_idx], height, rng,
                          f"{ctx} stack={stack_idx}")
        )
    dot_rows: list[tuple[int, int]] = []
    for stack_idx, left in enumerate(stacks):
        bottom = baseline
        for seg_idx, seg_h in enumerate(segment_heights[stack_idx]):
            top = bottom - seg_h + 1
            if top < 0:
                raise RenderError(f"{ctx}: stack {stack_idx} exceeds canvas")
            _draw_outlined_rect(canvas, top, bottom, left, left + app.stacked_bar_width - 1, app.stroke)
            if (stack_idx, seg_idx) in targets:
                dot_rows.append(((top + bottom) // 2, left + app.stacked_bar_width // 2))
            bottom = top - 1
    for row, col in dot_rows:
        canvas[row, col] = app.stroke
    return canvas


def choose_pair(bin_: RatioBin, table: PairTable, seed: int) -> HeightPair:
    """Seeded uniform choice among the bin's (h, H) pairs."""
    pairs = table.pairs_in(bin_)
    if not pairs:
        raise DomainError(f"bin {bin_.index} (midpoint {bin_.midpoint:.2f}) has no pairs in this table")
    rng = np.random.Generator(np.random.PCG64(seed))
    return pairs[int(rng.integers(len(pairs)))]


@dataclass
class DatasetManifest:
    """Everything needed to regenerate a dataset byte-for-byte."""

    format: str
    domain_label: str
    chart_type: int | None
    master_seed: int
    counts: dict[str, int]
    plans: dict[str, dict]          # role -> plan/value-set document
    appearance: dict
    height_budget: int | None
    palette: dict
    target_slots: dict
    digests: dict[str, str]         # role -> sha256 over per-image digests
    images_stubbed: bool
    generated_at: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        doc = json.loads(text)
        if doc.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"unsupported manifest format {doc.get('format')!r}")
        return DatasetManifest(**doc)


def _pairs_for_value(domain_label: str, value: float, table: PairTable):
    """All pairs consistent with one sampled domain value."""
    if domain_label == "ratio-bin":
        index = round(value * 100) - 5
        return table.pairs_in(index)
    if domain_label == "taller-height":
        taller = int(round(value))
        return tuple(p for p in table.all_pairs if p.H == taller)
    raise DomainError(f"domain {domain_label!r} has no renderable pairs")


def _make_record(args) -> tuple[str, bytes, dict]:
    """Worker: build and render one image; returns (id, png bytes, label row)."""
    (index, role, values, domain_label, chart_type, master_seed, appearance, budget) = args
    image_id = f"{role}-{index:06d}"
    rng = np.random.Generator(np.random.PCG64(stable_seed(master_seed, role, index)))
    value = values[int(rng.integers(len(values)))]
    table = _worker_table(budget)
    if domain_label == "ratio-bin":
        pair = choose_pair(RatioBin(round(value * 100) - 5), table, int(rng.integers(2 ** 63)))
    else:
        pairs = _pairs_for_value(domain_label, value, table)
        if not pairs:
            raise DomainError(f"{image_id}: no valid pair for value {value}")
        pair = pairs[int(rng.integers(len(pairs)))]
    distractor_seed = int(rng.integers(2 ** 63))
    record = StimulusRecord(
        image_id=image_id,
        chart_type=chart_type,
        pair=pair,
        bin_midpoint=bin_of(pair).midpoint,
        truth=pair.ratio_float,
        distractor_seed=distractor_seed,
        split_role=role,
    )
    canvas = render(record, appearance)
    png = encode_png(canvas)
    row = {
        "image_id": image_id,
        "type": chart_type,
        "h": pair.h,
        "H": pair.H,
        "truth": repr(pair.ratio_float),
        "bin": f"{record.bin_midpoint:.2f}",
    }
    return image_id, png, row


_TABLE_CACHE: dict[int | None, PairTable] = {}


def _worker_table(budget: int | None) -> PairTable:
    if budget not in _TABLE_CACHE:
        from .domain import enumerate_pairs

        if budget is None:
            _TABLE_CACHE[budget] = enumerate_pairs(False)
        else:
            _TABLE_CACHE[budget] = enumerate_pairs(True, budget)
    return _TABLE_CACHE[budget]


def encode_png(canvas: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(canvas, mode="L").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def generate_dataset(role_values: dict[str, list[float]],
                     counts: dict[str, int],
                     out_dir,
                     master_seed: int,
                     domain_label: str = "ratio-bin",
                     chart_type: int | None = 1,
                     appearance: Appearance = DEFAULT_APPEARANCE,
                     plans: dict[str, dict] | None = None,
                     height_budget: int | None = None,
                     workers: int = 1) -> DatasetManifest:
    """Materialize train/validation/test images plus manifest and labels.

    role_values maps each split role to the domain values it may draw
    from. Ratio and height domains render real charts; count domains emit
    label rows only (images_stubbed in the manifest). Worker count never
    affects content: each image depends only on (master_seed, role, index).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    renderable = domain_label in ("ratio-bin", "taller-height")
    if chart_type == 5 and height_budget is None:
        height_budget = DIVIDED_HEIGHT_BUDGET
    digests: dict[str, str] = {}
    label_rows: list[dict] = []
    try:
        for role, count in counts.items():
            values = list(role_values[role])
            if count < 1:
                raise ValueError(f"count for role {role!r} must be >= 1")
            role_digest = hashlib.sha256()
            if renderable:
                (out / role).mkdir(exist_ok=True)
                jobs = [(i, role, values, domain_label, chart_type, master_seed,
                         appearance, height_budget) for i in range(count)]
                if workers > 1:
                    with ProcessPoolExecutor(max_workers=workers) as pool:
                        results = list(pool.map(_make_record, jobs, chunksize=64))
                else:
                    results = [_make_record(j) for j in jobs]
                for image_id, png, row in results:
                    (out / role / f"{image_id}.png").write_bytes(png)
                    role_digest.update(hashlib.sha256(png).digest())
                    label_rows.append(row)
            else:
                for i in range(count):
                    image_id = f"{role}-{i:06d}"
                    rng = np.random.Generator(np.random.PCG64(stable_seed(master_seed, role, i)))
                    value = values[int(rng.integers(len(values)))]
                    row = {"image_id": image_id, "type": "", "h": "", "H": "",
                           "truth": repr(value), "bin": repr(value)}
                    role_digest.update(hashlib.sha256(repr(value).encode()).digest())
                    label_rows.append(row)
            digests[role] = role_digest.hexdigest()

        with open(out / "labels.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["image_id", "type", "h", "H", "truth", "bin"])
            writer.writeheader()
            writer.writerows(label_rows)

        manifest = DatasetManifest(
            format=MANIFEST_FORMAT,
            domain_label=domain_label,
            chart_type=chart_type if renderable else None,
            master_seed=master_seed,
            counts=dict(counts),
            plans=plans or {role: {"values": list(v)} for role, v in role_values.items()},
            appearance=appearance.as_dict(),
            height_budget=height_budget,
            palette={"background": appearance.background, "stroke": appearance.stroke,
                     "style": "1px-outline"},
            target_slots={"grouped": {str(k): v for k, v in GROUPED_TARGET_SLOTS.items()},
                          "stacked": {str(k): v for k, v in STACKED_TARGET_SLOTS.items()}},
            digests=digests,
            images_stubbed=not renderable,
            generated_at=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        )
        (out / "manifest.json").write_text(manifest.to_json())
        return manifest
    except Exception as exc:
        (out / "_INCOMPLETE").write_text(f"dataset generation aborted: {exc}\n")
        raise


def _role_values_from_manifest(manifest: DatasetManifest) -> dict[str, list[float]]:
    values = {}
    for role, doc in manifest.plans.items():
        if "order" in doc:
            values[role] = list(doc["order"])
        else:
            values[role] = list(doc["values"])
    return values


def regenerate_dataset(manifest: DatasetManifest, out_dir, workers: int = 1) -> DatasetManifest:
    """Re-render a dataset from its manifest; digests must reproduce."""
    appearance = Appearance(**{**manifest.appearance,
                               "canvas": tuple(manifest.appearance["canvas"])})
    return generate_dataset(
        role_values=_role_values_from_manifest(manifest),
        counts=manifest.counts,
        out_dir=out_dir,
        master_seed=manifest.master_seed,
        domain_label=manifest.domain_label,
        chart_type=manifest.chart_type,
        appearance=appearance,
        plans=manifest.plans,
        height_budget=manifest.height_budget,
        workers=workers,
    )


def read_labels(dataset_dir) -> list[dict]:
    with open(Path(dataset_dir) / "labels.csv", newline="") as fh:
        return list(csv.DictReader(fh))
