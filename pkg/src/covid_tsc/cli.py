"""Command-line entry point: ``covid-tsc <subcommand>``.

Exit codes: 0 success, 2 usage/config/input errors, 3 computation failures.
Human-readable output goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness, report, stats
from .cascade import CascadeModel, RoutingPolicy, evaluate_cascade, write_predictions_csv
from .dataio import FOUR_CLASS, read_manifest, sample_balanced, scan_directory, write_manifest
from .errors import ComputationError, InputError
from .metrics import write_confusion_csv, write_report
from .model import load_model

OUTPUT_ROOT_ENV = "COVID_TSC_OUTPUT_ROOT"
EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3

logger = logging.getLogger("covid_tsc")


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def cmd_ingest(args) -> int:
    manifest = scan_directory(args.root)
    if args.n_per_class is not None:
        manifest = sample_balanced(manifest, args.n_per_class, args.seed)
    write_manifest(manifest, args.out)
    for line in manifest.build_log:
        print(line, file=sys.stderr)
    for label, count in manifest.counts().items():
        print(f"{label}\t{count}")
    print(f"total\t{len(manifest)}")
    return EXIT_OK


def cmd_stats(args) -> int:
    manifest = read_manifest(args.manifest)
    out = Path(args.out)
    rows = stats.scatter_table(manifest)
    stats.write_scatter_csv(rows, out / "scatter.csv")
    stats.write_distribution_csv(stats.class_distribution(manifest), out / "distribution.csv")
    print(f"wrote {len(rows)} rows to {out / 'scatter.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {
        "mode": args.mode.replace("-", "_") if args.mode else None,
        "k": args.k,
        "seed": args.seed,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
        "output_dir": args.out,
    }
    config = harness.ExperimentConfig.from_file(args.config, **overrides)
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.out is None and "output_dir" not in raw:
        config = config.replace(output_dir=str(_output_root() / config.mode))
    result = harness.run_experiment(config)
    print(f"mode {config.mode}, folds {len(result.reports)}, output {result.output_dir}")
    print(f"accuracy {result.accuracy_mean:.4f} (std {result.accuracy_std:.4f})")
    return EXIT_OK


def cmd_cascade(args) -> int:
    stage1 = load_model(args.stage1_model)
    stage2 = load_model(args.stage2_model)
    test = read_manifest(args.test_manifest, FOUR_CLASS)
    policy = RoutingPolicy("soft" if args.soft else "hard", args.threshold)
    cascade = CascadeModel(stage1, stage2, policy)
    out = Path(args.out) if args.out else _output_root() / "cascade"
    with harness.output_lock(out):
        ev = evaluate_cascade(cascade, test)
        write_predictions_csv(ev.predictions, ev.true_labels, out / "predictions.csv")
        write_confusion_csv(ev.confusion, out / "confusion_cascade.csv")
        write_report(ev.report, out / "report_cascade.txt")
        write_confusion_csv(ev.stage1_confusion, out / "confusion_stage1.csv")
        write_report(ev.stage1_report, out / "report_stage1.txt")
        if ev.stage2_oracle_report is not None:
            write_confusion_csv(ev.stage2_oracle_confusion, out / "confusion_stage2.csv")
            write_report(ev.stage2_oracle_report, out / "report_stage2.txt")
        if ev.stage2_pipeline_report is not None:
            write_confusion_csv(ev.stage2_pipeline_confusion, out / "confusion_stage2_pipeline.csv")
            write_report(ev.stage2_pipeline_report, out / "report_stage2_pipeline.txt")
    n_normal = sum(1 for l in ev.predictions.labels if l == "normal")
    print(f"accuracy {ev.report.accuracy:.4f}")
    print(f"normal predictions {n_normal} of {len(test)}")
    return EXIT_OK


def cmd_compare(args) -> int:
    summaries = [harness.load_result_summary(d) for d in args.result_dirs]
    annotations = []
    if args.annotations:
        try:
            annotations = json.loads(Path(args.annotations).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read annotations {args.annotations}: {exc}") from exc
    table = harness.comparison_table(summaries, annotations)
    out = Path(args.out) if args.out else _output_root() / "comparison.csv"
    table.to_csv(out)
    print(table.render(), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    kind = args.kind
    if kind == "curves":
        path = report.render_curves(args.input, args.out, args.format, args.title)
    elif kind == "heatmap":
        path = report.render_confusion_heatmap(args.input, args.out, args.format, args.title)
    elif kind in ("distribution", "bars"):
        path = report.render_distribution(args.input, args.out, args.format, args.title)
    else:
        path = report.render_scatter(args.input, args.out, args.per_class, args.format, args.title)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="covid-tsc",
        description="One-shot vs two-stage cascade image classification pipeline.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_,
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.add_argument("--seed", type=int, default=0, help="root random seed")
        sp.set_defaults(func=func)
        return sp

    sp = add("ingest", cmd_ingest, "index a class-per-folder dataset into a manifest CSV")
    sp.add_argument("root", help="dataset root with one folder per class")
    sp.add_argument("out", help="manifest CSV to write")
    sp.add_argument("--n-per-class", type=int, default=None, help="balanced sample size per class")

    sp = add("stats", cmd_stats, "per-image channel statistics and class distribution")
    sp.add_argument("manifest", help="manifest CSV")
    sp.add_argument("--out", default=".", help="directory for scatter.csv and distribution.csv")

    sp = add("train", cmd_train, "run an experiment from a JSON config")
    sp.add_argument("config", help="experiment config (JSON)")
    sp.add_argument("--mode", choices=["one-shot", "stage1", "stage2", "cascade"], default=None,
                    help="overrides config mode")
    sp.add_argument("--k", type=int, default=None, help="folds (1 = no cross-validation)")
    sp.add_argument("--epochs", type=int, default=None, help="overrides config epochs")
    sp.add_argument("--learning-rate", type=float, default=None, help="overrides config learning_rate")
    sp.add_argument("--batch-size", type=int, default=None, help="overrides config batch_size")
    sp.add_argument("--out", default=None,
                    help=f"output directory (default: config output_dir, else ${OUTPUT_ROOT_ENV}/<mode>)")
    # flags fall back to the config file, not to argparse defaults
    sp.set_defaults(seed=None)

    sp = add("cascade", cmd_cascade, "evaluate a two-stage cascade on a test manifest")
    sp.add_argument("stage1_model", help="stage-1 model file (.npz or lookup .json)")
    sp.add_argument("stage2_model", help="stage-2 model file (.npz or lookup .json)")
    sp.add_argument("test_manifest", help="4-class test manifest CSV")
    sp.add_argument("--threshold", type=float, default=0.5, help="stage-1 disease threshold")
    sp.add_argument("--soft", action="store_true", help="label by argmax of the composed distribution")
    sp.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ROOT_ENV}/cascade)")

    sp = add("compare", cmd_compare, "comparison table over experiment result directories")
    sp.add_argument("result_dirs", nargs="+", help="directories holding result.json")
    sp.add_argument("--out", default=None, help="comparison CSV path")
    sp.add_argument("--annotations", default=None, help="JSON list of reference rows to append")

    sp = add("report", cmd_report, "render a figure from a CSV artifact")
    sp.add_argument("kind", choices=["curves", "heatmap", "distribution", "bars", "scatter"],
                    help="figure type; bars is an alias of distribution")
    sp.add_argument("input", help="history / confusion / distribution / scatter CSV")
    sp.add_argument("out", help="image path")
    sp.add_argument("--format", choices=list(report.FORMATS), default=None,
                    help="image format (default from the output suffix, else png)")
    sp.add_argument("--per-class", action="store_true", help="scatter: one panel per class")
    sp.add_argument("--title", default=None)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ComputationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (InputError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
