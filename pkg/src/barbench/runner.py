"""Experiment orchestration: grid execution, analysis, reports, model card.

A single JSON config describes one study as a grid of sampling method x
downsampling level x chart type x run. Test and validation values are
held out once per study (so every model faces the same tests) and their
images are rendered once and shared; each grid cell renders only its own
training images, trains the desk-scale regressor, and writes predictions
in the shared CSV schema:

    image_id,run_id,method,level,chart_type,h,H,truth,prediction

Cells are resumable: a cell whose fingerprint marker is already on disk
is skipped, so a partially failed grid can be re-run cheaply. Failures
are recorded per cell and never abort siblings. The analysis phase
aggregates predictions by (h, H) pair, runs the ANOVA/Tukey/eta-squared
battery, measures training-test distance per cell, and renders the
report figures plus a model card.
"""

from __future__ import annotations

import csv
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import analysis as stats
from . import sampling
from .domain import DIVIDED_HEIGHT_BUDGET, DiscreteDomain, domain_by_label
from .learner import LearnerConfig, featurize_dataset, load_model, predict, save_model, train
from .sampling import DownsampleLevel, SamplingPlan, Split, make_plan, training_test_distance
from .seeds import stable_seed
from .stimulus import generate_dataset
from .figures import (
    plot_consistency_heatmap,
    plot_error_bars,
    plot_ttd_vs_error,
    plot_truth_vs_prediction,
)

CONFIG_SCHEMA = "barbench-config/1"
REPORT_SCHEMA = "barbench-report/1"
PREDICTIONS_HEADER = ["image_id", "run_id", "method", "level", "chart_type",
                      "h", "H", "truth", "prediction"]
WORKERS_ENV = "BARBENCH_WORKERS"

STUDIES = ("robustness", "stability", "baseline", "ttd")
RENDERABLE = ("ratio-bin", "taller-height")

DESK_COUNTS = {"train": 6000, "validation": 2000, "test": 2000}
PAPER_COUNTS = {"train": 60000, "validation": 20000, "test": 20000}


@dataclass
class ExperimentConfig:
    study: str
    target: str = "ratio-bin"
    methods: list[str] = field(default_factory=lambda: ["IID", "COV", "ADV", "OOD-left"])
    levels: list[str] = field(default_factory=lambda: ["30%"])
    chart_types: list[int] = field(default_factory=lambda: [1])
    runs: int = 5
    counts: dict[str, int] = field(default_factory=lambda: dict(DESK_COUNTS))
    master_seed: int = 7
    out_dir: str = "out"
    learner: str = "toy"
    learner_overrides: dict = field(default_factory=dict)
    adv_aggregate: str = "min"
    type5_height_budget: int = DIVIDED_HEIGHT_BUDGET
    schema: str = CONFIG_SCHEMA

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if not self.methods:
            raise ValueError("config needs at least one sampling method")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.learner not in ("toy", "external"):
            raise ValueError(f"learner must be 'toy' or 'external', got {self.learner!r}")
        for m in self.methods:
            if m not in sampling.METHODS:
                raise ValueError(f"unknown sampling method {m!r}")
        for lev in self.levels:
            if lev not in sampling.LEVELS:
                raise ValueError(f"unknown downsampling level {lev!r}")

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        schema = doc.pop("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema {schema!r}")
        return ExperimentConfig(**doc)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        return ExperimentConfig.from_json(Path(path).read_text())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def fingerprint(self) -> int:
        return stable_seed("config", self.to_json())


@dataclass
class CellResult:
    method: str
    level: str
    chart_type: int
    run: int
    ttd: float
    prediction_file: str | None = None
    trained: bool = False
    skipped: bool = False
    error: str | None = None
    mae: float | None = None
    mlae: float | None = None


@dataclass
class RunResult:
    config_fingerprint: int
    cells: list[CellResult]
    report_path: str | None
    failures: list[str]

    @property
    def trained_count(self) -> int:
        return sum(1 for c in self.cells if c.trained)


def _level_label(method: str, level: str) -> str:
    # IID-LARGE uses the whole pool; downsampling levels do not apply
    return "100%" if method == "IID-LARGE" else level


def _safe(label: str) -> str:
    return label.replace("%", "pct").replace("/", "-")


def study_domain(config: ExperimentConfig, chart_type: int) -> DiscreteDomain:
    if config.target == "ratio-bin":
        return domain_by_label("ratio-bin", type5_constrained=(chart_type == 5),
                               height_budget=config.type5_height_budget)
    return domain_by_label(config.target)


def study_split(config: ExperimentConfig, chart_type: int) -> Split:
    domain = study_domain(config, chart_type)
    return sampling.split_holdout(domain, stable_seed(config.master_seed, "split", domain.label,
                                                      len(domain)))


def cell_plan(config: ExperimentConfig, split: Split, method: str, level: str,
              run: int) -> SamplingPlan:
    m = DownsampleLevel.for_domain("30%", len(split.test) + len(split.validation) + len(split.pool)).count
    seed = stable_seed(config.master_seed, "plan", method, run)
    if method == "ADV":
        plan = sampling.sample_adv(split, m, aggregate=config.adv_aggregate)
    elif method == "IID-LARGE":
        plan = sampling.sample_iid_large(split, seed)
    else:
        plan = make_plan(method, split, m, seed)
    if method != "IID-LARGE":
        plan = sampling.downsample(plan, DownsampleLevel.for_domain(level, len(split.test) + len(split.validation) + len(split.pool)))
    return plan


def shared_dataset_dir(config: ExperimentConfig, chart_type: int) -> Path:
    return Path(config.out_dir) / "shared" / f"{_safe(config.target)}__type{chart_type}"


def cell_dir(config: ExperimentConfig, method: str, level: str, chart_type: int, run: int) -> Path:
    name = f"{_safe(method)}__{_safe(_level_label(method, level))}__type{chart_type}__run{run}"
    return Path(config.out_dir) / "cells" / name


def _cell_fingerprint(config: ExperimentConfig, method: str, level: str,
                      chart_type: int, run: int) -> int:
    payload = {
        "target": config.target, "method": method, "level": _level_label(method, level),
        "chart_type": chart_type, "run": run, "counts": config.counts,
        "master_seed": config.master_seed, "learner": config.learner,
        "learner_overrides": config.learner_overrides, "adv_aggregate": config.adv_aggregate,
        "type5_height_budget": config.type5_height_budget,
    }
    return stable_seed("cell", json.dumps(payload, sort_keys=True))


def ensure_shared_dataset(config: ExperimentConfig, chart_type: int) -> Path:
    """Render the held-constant validation and test images once per study."""
    out = shared_dataset_dir(config, chart_type)
    if (out / "manifest.json").exists():
        return out
    split = study_split(config, chart_type)
    generate_dataset(
        role_values={"validation": list(split.validation), "test": list(split.test)},
        counts={"validation": config.counts["validation"], "test": config.counts["test"]},
        out_dir=out,
        master_seed=stable_seed(config.master_seed, "shared", config.target, chart_type),
        domain_label=config.target,
        chart_type=chart_type,
        plans={"validation": {"values": list(split.validation)},
               "test": {"values": list(split.test)}},
        height_budget=config.type5_height_budget if chart_type == 5 else None,
    )
    return out


def _write_predictions(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PREDICTIONS_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def read_predictions(path) -> list[stats.PredictionRecord]:
    """Load a shared-schema CSV, refusing rows that look like training data."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["image_id"].startswith("test-"):
                raise ValueError(f"{path}: training/eval split mixing: {row['image_id']}")
            records.append(stats.PredictionRecord(
                image_id=row["image_id"],
                h=int(row["h"]) if row["h"] else None,
                H=int(row["H"]) if row["H"] else None,
                truth=float(row["truth"]),
                prediction=float(row["prediction"]),
                run_id=row["run_id"],
                method=row["method"],
                level=row["level"],
                chart_type=int(row["chart_type"]) if row["chart_type"] else None,
            ))
    return records


def run_cell(config: ExperimentConfig, method: str, level: str, chart_type: int,
             run: int) -> CellResult:
    """Execute one grid cell; never raises, failures land in the result."""
    level_label = _level_label(method, level)
    out = cell_dir(config, method, level, chart_type, run)
    marker = out / "done.json"
    fingerprint = _cell_fingerprint(config, method, level, chart_type, run)
    try:
        split = study_split(config, chart_type)
        plan = cell_plan(config, split, method, level, run)
        ttd = training_test_distance(plan.order, split.test)
        if marker.exists():
            done = json.loads(marker.read_text())
            if done.get("fingerprint") == fingerprint:
                return CellResult(method, level_label, chart_type, run, ttd,
                                  prediction_file=done.get("prediction_file"),
                                  skipped=True)
        out.mkdir(parents=True, exist_ok=True)
        (out / "plan.json").write_text(plan.to_json())

        renderable = config.target in RENDERABLE
        prediction_file = out / "predictions.csv"
        trained = False
        if renderable and config.learner == "toy":
            shared = ensure_shared_dataset(config, chart_type)
            generate_dataset(
                role_values={"train": list(plan.order)},
                counts={"train": config.counts["train"]},
                out_dir=out / "data",
                master_seed=stable_seed(config.master_seed, "data", method, level_label,
                                        chart_type, run),
                domain_label=config.target,
                chart_type=chart_type,
                plans={"train": json.loads(plan.to_json())},
                height_budget=config.type5_height_budget if chart_type == 5 else None,
            )
            x_train, y_train, _ = featurize_dataset(out / "data", "train")
            x_val, y_val, _ = featurize_dataset(shared, "validation")
            learner_config = LearnerConfig(
                seed=stable_seed(config.master_seed, "learner", method, level_label,
                                 chart_type, run),
                **config.learner_overrides,
            )
            model = train(learner_config, (x_train, y_train), (x_val, y_val))
            save_model(model, out / "model.bin")
            x_test, _, test_rows = featurize_dataset(shared, "test")
            preds = predict(model, x_test)
            rows = [{
                "image_id": r["image_id"], "run_id": f"run{run}", "method": method,
                "level": level_label, "chart_type": chart_type, "h": r["h"], "H": r["H"],
                "truth": r["truth"], "prediction": repr(float(p)),
            } for r, p in zip(test_rows, preds)]
            _write_predictions(prediction_file, rows)
            trained = True
        elif config.learner == "external" and renderable:
            ensure_shared_dataset(config, chart_type)
            if not prediction_file.exists():
                raise FileNotFoundError(
                    f"external learner mode: {prediction_file} not found "
                    "(drop bridge predictions there and re-run)")
        else:
            prediction_file = None  # count domains: distance-only cells

        result = CellResult(method, level_label, chart_type, run, ttd,
                            prediction_file=str(prediction_file) if prediction_file else None,
                            trained=trained)
        if prediction_file is not None and prediction_file.exists():
            records = read_predictions(prediction_file)
            result.mae = stats.mae(records)
            result.mlae = stats.mlae(records)
        marker.write_text(json.dumps({
            "fingerprint": fingerprint,
            "prediction_file": str(prediction_file) if prediction_file else None,
            "ttd": ttd, "mae": result.mae, "mlae": result.mlae,
        }, indent=2))
        return result
    except Exception as exc:  # cell isolation: record and continue
        detail = f"{type(exc).__name__}: {exc}"
        (out / "error.txt").parent.mkdir(parents=True, exist_ok=True)
        (out / "error.txt").write_text(traceback.format_exc())
        return CellResult(method, level_label, chart_type, run, float("nan"), error=detail)


def _run_cell_job(args) -> CellResult:
    config_json, method, level, chart_type, run = args
    return run_cell(ExperimentConfig.from_json(config_json), method, level, chart_type, run)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> RunResult:
    """Execute the full grid, then analyze, plot, and write the model card."""
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())

    grid: list[tuple[str, str, int, int]] = []
    seen = set()
    for method in config.methods:
        for level in config.levels:
            for chart_type in (config.chart_types if config.target in RENDERABLE else [0]):
                for run in range(1, config.runs + 1):
                    key = (method, _level_label(method, level), chart_type, run)
                    if key not in seen:  # IID-LARGE collapses all levels into one cell
                        seen.add(key)
                        grid.append((method, level, chart_type, run))

    # render shared datasets up front so parallel cells never race on them
    if config.target in RENDERABLE:
        for chart_type in config.chart_types:
            ensure_shared_dataset(config, chart_type)

    if workers > 1:
        jobs = [(config.to_json(), *cell) for cell in grid]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        cells = [run_cell(config, *cell) for cell in grid]

    failures = [f"{c.method}/{c.level}/type{c.chart_type}/run{c.run}: {c.error}"
                for c in cells if c.error]
    report_path = None
    ok_cells = [c for c in cells if not c.error]
    if ok_cells:
        report = analyze_results(config, ok_cells)
        report_path = str(write_report(config, report))
    return RunResult(config.fingerprint(), cells, report_path, failures)


def _load_cell_records(cells) -> list[stats.PredictionRecord]:
    records = []
    for cell in cells:
        if cell.prediction_file and Path(cell.prediction_file).exists():
            records.extend(read_predictions(cell.prediction_file))
    return records


def analyze_results(config: ExperimentConfig, cells: list[CellResult]) -> dict:
    """Assemble the statistics document from per-cell artifacts."""
    records = _load_cell_records(cells)
    report: dict = {
        "schema": REPORT_SCHEMA,
        "study": config.study,
        "target": config.target,
        "config_fingerprint": config.fingerprint(),
        "cells": [asdict(c) for c in cells],
        "anova": [],
        "consistency": {},
        "summary": {},
    }

    def trials_by(group_of) -> dict[str, list[float]]:
        by_group: dict[str, list] = {}
        for r in records:
            by_group.setdefault(group_of(r), []).append(r)
        return {g: list(stats.aggregate_by_pair(rs).values()) for g, rs in sorted(by_group.items())}

    def add_anova(variable: str, trials: dict) -> None:
        usable = {k: v for k, v in trials.items() if len(v) >= 2}
        if len(usable) < 2:
            return
        result = stats.anova_oneway(usable)
        _, groups = stats.tukey_hsd(usable)
        result.groups = groups
        report["anova"].append({"variable": variable, **result.as_dict()})

    if records:
        methods_present = sorted({r.method for r in records})
        levels_present = sorted({r.level for r in records})
        types_present = sorted({r.chart_type for r in records if r.chart_type})
        add_anova("sampling-method", trials_by(lambda r: r.method))
        if len(types_present) > 1:
            # chart-type effect at a fixed method, as the per-type tables do
            base = "IID" if "IID" in methods_present else methods_present[0]
            add_anova(f"chart-type ({base})",
                      {str(t): list(stats.aggregate_by_pair(
                          [r for r in records if r.method == base and r.chart_type == t]).values())
                       for t in types_present})
        if len(levels_present) > 1:
            add_anova("downsampling-level", trials_by(lambda r: r.level))
            for level in levels_present:
                level_records = [r for r in records if r.level == level]
                add_anova(f"sampling-method @ {level}",
                          {m: list(stats.aggregate_by_pair(
                              [r for r in level_records if r.method == m]).values())
                           for m in sorted({r.method for r in level_records})})
            # intra-consistency: per-pair mean predictions across levels
            for method in methods_present:
                series = {}
                for level in levels_present:
                    sub = [r for r in records if r.method == method and r.level == level]
                    if not sub:
                        continue
                    by_pair: dict = {}
                    for r in sub:
                        by_pair.setdefault((r.h, r.H), []).append(r.prediction)
                    series[level] = {k: float(np.mean(v)) for k, v in by_pair.items()}
                if len(series) > 1:
                    matrix = stats.consistency_matrix(series)
                    report["consistency"][method] = matrix.as_dict()

        summary = {}
        for method in methods_present:
            for level in sorted({r.level for r in records if r.method == method}):
                sub = [r for r in records if r.method == method and r.level == level]
                trials = list(stats.aggregate_by_pair(sub).values())
                entry = {"mae": stats.mae(sub), "mlae": stats.mlae(sub), "n_trials": len(trials)}
                if len(trials) >= 2:
                    entry["ci95"] = stats.confidence_interval_95(trials)
                summary[f"{method} @ {level}"] = entry
        report["summary"] = summary

    # per-cell training-test distance against error
    points = [{"method": c.method, "level": c.level, "run": c.run,
               "ttd": c.ttd, "mae": c.mae}
              for c in cells if c.mae is not None and np.isfinite(c.ttd)]
    report["ttd_points"] = points
    if len(points) >= 3 and len({p["ttd"] for p in points}) > 1:
        report["ttd_error_correlation"] = {
            "r": stats.pearson([p["ttd"] for p in points], [p["mae"] for p in points]),
            "n": len(points),
        }
    ttd_only = [{"method": c.method, "level": c.level, "run": c.run, "ttd": c.ttd}
                for c in cells if np.isfinite(c.ttd)]
    report["ttd_table"] = ttd_only
    return report


def write_report(config: ExperimentConfig, report: dict) -> Path:
    """report.json + tables.csv + SVG figures under <out>/report/."""
    out = Path(config.out_dir) / "report"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2))

    with open(out / "tables.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "F", "df_between", "df_within", "p", "eta2",
                         "effect", "hsd_groups"])
        for row in report["anova"]:
            groups = " > ".join("(" + ", ".join(g) + ")" for g in row["groups"])
            writer.writerow([row["variable"], f"{row['F']:.6g}", row["df_between"],
                             row["df_within"], f"{row['p']:.6g}", f"{row['eta2']:.6g}",
                             row["effect"], groups])

    cells = report["cells"]
    records_by_method: dict[str, list] = {}
    for cell in cells:
        if cell.get("prediction_file") and Path(cell["prediction_file"]).exists():
            for r in read_predictions(cell["prediction_file"]):
                records_by_method.setdefault(r.method, []).append(r)
    if records_by_method:
        scatter = {m: ([r.truth for r in rs], [r.prediction for r in rs])
                   for m, rs in records_by_method.items()}
        plot_truth_vs_prediction(scatter, out / "truth_vs_prediction.svg")
        means, intervals = {}, {}
        for key, entry in report["summary"].items():
            if "ci95" in entry:
                means[key] = entry["mae"]
                intervals[key] = tuple(entry["ci95"])
        if means:
            plot_error_bars(means, intervals, out / "error_bars.svg")
    if len(report.get("ttd_points", [])) >= 3:
        plot_ttd_vs_error(report["ttd_points"], out / "ttd_vs_error.svg")
    for method, doc in report.get("consistency", {}).items():
        matrix = stats.ConsistencyMatrix(axis=doc["axis"], r=np.asarray(doc["r"]))
        plot_consistency_heatmap(matrix, out / f"consistency_{_safe(method)}.svg",
                                 title=method)

    card = emit_model_card(config, report)
    (out / "model_card.md").write_text(card)
    return out / "report.json"


def emit_model_card(config: ExperimentConfig, report: dict) -> str:
    """Provenance card: sampling, spans, distributions, image size, seeds."""
    if not report.get("cells"):
        raise ValueError("refusing to emit a model card for empty results")
    image_line = ("Image size: 100x100 grayscale, 1px outlined bars on white."
                  if config.target in RENDERABLE else
                  "Images: stubbed (count-domain records carry values only).")
    lines = [
        "# Model card",
        "",
        f"Study: {config.study} on the {config.target} domain.",
        f"Master seed: {config.master_seed} (pcg64 streams derived per artifact).",
        image_line,
        f"Runs per condition: {config.runs}; learner: {config.learner}.",
        "",
        "## Training sample selection",
        "",
    ]
    chart_type = config.chart_types[0] if config.target in RENDERABLE else 1
    split = study_split(config, chart_type)
    domain = study_domain(config, chart_type)
    lines.append(f"Domain: {len(domain)} unique values in "
                 f"[{min(domain.values):g}, {max(domain.values):g}]; "
                 f"holdout {len(split.test)} test / {len(split.validation)} validation / "
                 f"{len(split.pool)} pool.")
    lines.append("")
    for method in config.methods:
        plan = cell_plan(config, split, method, "30%", 1)
        span = f"[{min(plan.order):g}, {max(plan.order):g}]"
        lines.append(f"- {method}: m={plan.m}, span {span}, "
                     f"values {', '.join(f'{v:g}' for v in sorted(plan.order))}")
    lines += ["", "## Image counts per split", ""]
    for role, count in config.counts.items():
        lines.append(f"- {role}: {count}")
    lines += ["", "## Results summary", ""]
    for key, entry in sorted(report.get("summary", {}).items()):
        ci = entry.get("ci95")
        ci_text = f", 95% CI [{ci[0]:.4f}, {ci[1]:.4f}]" if ci else ""
        lines.append(f"- {key}: MAE {entry['mae']:.4f}, MLAE {entry['mlae']:.3f}"
                     f" over {entry['n_trials']} (h, H) trials{ci_text}")
    if "ttd_error_correlation" in report:
        corr = report["ttd_error_correlation"]
        lines.append(f"- training-test distance vs error: r = {corr['r']:.3f} over {corr['n']} runs")
    lines.append("")
    return "\n".join(lines)
