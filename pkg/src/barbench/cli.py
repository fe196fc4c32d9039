"""Command-line entry points.

Subcommands mirror the pipeline stages: `domain dump` exports the pair
table, `sample` writes a selection plan, `render` materializes a dataset,
`train`/`evaluate` drive the desk-scale learner, `analyze` computes the
statistics for prediction CSVs, `report` renders figures and the model
card from a finished run, and `run` executes a whole study config.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from . import analysis as stats
from . import sampling
from .domain import DIVIDED_HEIGHT_BUDGET, domain_by_label, enumerate_pairs
from .learner import LearnerConfig, featurize_dataset, load_model, predict, save_model, train
from .runner import (
    ExperimentConfig,
    analyze_results,
    CellResult,
    read_predictions,
    run_experiment,
    write_report,
)
from .sampling import DownsampleLevel, split_holdout
from .seeds import stable_seed
from .stimulus import DatasetManifest, generate_dataset, regenerate_dataset


def _cmd_domain(args) -> int:
    if args.action == "dump":
        table = enumerate_pairs(args.type5, args.height_budget)
        table.to_csv(args.out)
        print(f"wrote {args.out}: {len(table.all_pairs)} pairs across {len(table.bins)} bins")
        return 0
    raise SystemExit(f"unknown domain action {args.action!r}")


def _cmd_sample(args) -> int:
    domain = domain_by_label(args.domain)
    split = split_holdout(domain, args.seed)
    m = args.m or DownsampleLevel.for_domain("30%", len(domain)).count
    plan = sampling.make_plan(args.method, split, m, args.seed)
    if args.level and args.method != "IID-LARGE":
        plan = sampling.downsample(plan, DownsampleLevel.for_domain(args.level, len(domain)))
    Path(args.out).write_text(plan.to_json())
    print(f"wrote {args.out}: {plan.method} m={plan.m} over {args.domain}")
    return 0


def _cmd_render(args) -> int:
    if args.from_manifest:
        manifest = DatasetManifest.from_json(Path(args.from_manifest).read_text())
        regen = regenerate_dataset(manifest, args.out, workers=args.workers)
        same = regen.digests == manifest.digests
        print(f"regenerated into {args.out}; digests match: {same}")
        return 0 if same else 1
    plan = sampling.SamplingPlan.from_json(Path(args.plan).read_text())
    counts = {"train": args.train_count, "validation": args.validation_count,
              "test": args.test_count}
    generate_dataset(
        role_values={"train": list(plan.order),
                     "validation": list(plan.split.validation),
                     "test": list(plan.split.test)},
        counts=counts,
        out_dir=args.out,
        master_seed=args.seed,
        domain_label=plan.target,
        chart_type=args.chart_type,
        plans={"train": json.loads(plan.to_json()),
               "validation": {"values": list(plan.split.validation)},
               "test": {"values": list(plan.split.test)}},
        height_budget=DIVIDED_HEIGHT_BUDGET if args.chart_type == 5 else None,
        workers=args.workers,
    )
    print(f"wrote dataset under {args.out}")
    return 0


def _cmd_train(args) -> int:
    x_train, y_train, _ = featurize_dataset(args.dataset, "train")
    x_val, y_val, _ = featurize_dataset(args.dataset, "validation")
    config = LearnerConfig(seed=args.seed)
    model = train(config, (x_train, y_train), (x_val, y_val))
    save_model(model, args.out)
    best = model.best_val_loss
    print(f"trained {model.stopped_epoch} epochs (best {model.best_epoch}, "
          f"val MSE {best:.6f}); wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    model = load_model(args.model)
    x_test, _, rows = featurize_dataset(args.dataset, args.split)
    preds = predict(model, x_test)
    import csv

    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image_id", "run_id", "method", "level",
                                                "chart_type", "h", "H", "truth", "prediction"])
        writer.writeheader()
        for row, p in zip(rows, preds):
            writer.writerow({"image_id": row["image_id"], "run_id": args.run_id,
                             "method": args.method, "level": args.level,
                             "chart_type": row["type"], "h": row["h"], "H": row["H"],
                             "truth": row["truth"], "prediction": repr(float(p))})
    print(f"wrote {args.out}: {len(rows)} predictions")
    return 0


def _cmd_analyze(args) -> int:
    records = []
    for path in args.predictions:
        records.extend(read_predictions(path))
    by_method: dict[str, list] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    doc = {"mae": {m: stats.mae(rs) for m, rs in sorted(by_method.items())},
           "mlae": {m: stats.mlae(rs) for m, rs in sorted(by_method.items())}}
    trials = {m: list(stats.aggregate_by_pair(rs).values()) for m, rs in by_method.items()}
    usable = {m: t for m, t in trials.items() if len(t) >= 2}
    if len(usable) >= 2:
        result = stats.anova_oneway(usable)
        _, groups = stats.tukey_hsd(usable)
        result.groups = groups
        doc["anova"] = result.as_dict()
    Path(args.out).write_text(json.dumps(doc, indent=2))
    print(f"wrote {args.out}")
    return 0


def _cmd_report(args) -> int:
    config = ExperimentConfig.from_file(Path(args.run_dir) / "config.json")
    config.out_dir = args.run_dir
    cells = []
    for marker in sorted(Path(args.run_dir).glob("cells/*/done.json")):
        done = json.loads(marker.read_text())
        name = marker.parent.name
        method, level, type_part, run_part = name.split("__")
        cells.append(CellResult(
            method=method.replace("pct", "%"), level=level.replace("pct", "%"),
            chart_type=int(type_part.removeprefix("type")),
            run=int(run_part.removeprefix("run")),
            ttd=done["ttd"], prediction_file=done.get("prediction_file"),
            mae=done.get("mae"), mlae=done.get("mlae"),
        ))
    if not cells:
        print("no completed cells found", file=sys.stderr)
        return 1
    report = analyze_results(config, cells)
    path = write_report(config, report)
    print(f"wrote {path} and figures alongside it")
    return 0


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.out:
        config.out_dir = args.out
    if args.paper_scale:
        config.counts = {"train": 60000, "validation": 20000, "test": 20000}
    result = run_experiment(config, workers=args.workers)
    print(f"cells: {len(result.cells)}; trained: {result.trained_count}; "
          f"skipped: {sum(1 for c in result.cells if c.skipped)}; "
          f"failures: {len(result.failures)}")
    for failure in result.failures:
        print(f"  FAILED {failure}", file=sys.stderr)
    if result.report_path:
        print(f"report: {result.report_path}")
    return 1 if result.failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barbench",
                                     description="sampling-regime workbench for chart-reading models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("domain", help="inspect or export the sampling domain")
    p.add_argument("action", choices=["dump"])
    p.add_argument("--type5", action="store_true", help="apply the divided-bar height budget")
    p.add_argument("--height-budget", type=int, default=DIVIDED_HEIGHT_BUDGET)
    p.add_argument("--out", default="pairs.csv")
    p.set_defaults(func=_cmd_domain)

    p = sub.add_parser("sample", help="write a training-selection plan")
    p.add_argument("--domain", default="ratio-bin",
                   choices=["ratio-bin", "taller-height", "cell-count", "node-count"])
    p.add_argument("--method", default="IID", choices=list(sampling.METHODS))
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--level", default=None, choices=list(sampling.LEVELS))
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="plan.json")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("render", help="materialize a dataset from a plan or manifest")
    p.add_argument("--plan", help="plan JSON from `barbench sample`")
    p.add_argument("--from-manifest", help="regenerate from an existing manifest.json")
    p.add_argument("--chart-type", type=int, default=1, choices=[1, 2, 3, 4, 5])
    p.add_argument("--train-count", type=int, default=600)
    p.add_argument("--validation-count", type=int, default=200)
    p.add_argument("--test-count", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="dataset")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("train", help="train the desk-scale regressor on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="model.bin")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="emit predictions CSV for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--method", default="IID")
    p.add_argument("--level", default="30%")
    p.add_argument("--run-id", default="run1")
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze", help="statistics for one or more prediction CSVs")
    p.add_argument("predictions", nargs="+")
    p.add_argument("--out", default="analysis.json")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="rebuild report + figures from a finished run dir")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="execute a full study config")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--paper-scale", action="store_true",
                   help="use the 60k/20k/20k image counts")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
