"""Command-line entry points.

Subcommands: ingest, train, transfer, evaluate, sweep, report. Every command
exits 0 on success; failures print a machine-readable JSON error record to
stderr and exit non-zero (2 for configuration/validation problems, 1
otherwise). ``MTLTEXT_OUTPUT_DIR`` and ``MTLTEXT_PRECISION`` override the
output directory and numeric precision of any config-driven command.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .corpus import IngestError, TASKS
from .experiments import (
    discover_results,
    evaluate_checkpoint,
    load_results,
    load_splits,
    report_table,
    run_experiment,
    run_transfer,
    sweep_beta,
)
from .training import TrainingDiverged

FAMILY_ALIASES = {
    "stl": "stl",
    "double": "double_encoders",
    "double_encoders": "double_encoders",
    "fusion": "attention_fusion",
    "attention_fusion": "attention_fusion",
}


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(args.config)
    if getattr(args, "family", None):
        config = replace(config, family=FAMILY_ALIASES[args.family])
    if getattr(args, "task", None):
        config = replace(config, task=args.task)
    if getattr(args, "beta", None) is not None:
        config = replace(config, train=replace(config.train, beta=args.beta))
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed,
                         train=replace(config.train, seed=args.seed))
    if getattr(args, "run_id", None):
        config = replace(config, run_id=args.run_id)
    return config


def cmd_ingest(args) -> int:
    config = _load_config(args)
    config.validate()
    out_dir = Path(config.output_dir) / f"{config.run_id}-ingest"
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = load_splits(config, out_dir)
    summary = {task: corpus.composition() for task, corpus in splits.items()}
    (out_dir / "split_composition.json").write_text(json.dumps(summary, indent=2),
                                                    encoding="utf-8")
    print(json.dumps({"ingested": summary, "manifests": str(out_dir)}, indent=2))
    return 0


def cmd_train(args) -> int:
    result = run_experiment(_load_config(args))
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_transfer(args) -> int:
    config = _load_config(args)
    result = run_transfer(config, args.source, args.target,
                          source_lr=args.source_lr, target_lr=args.target_lr)
    print(json.dumps(result.to_dict(), indent=2))
    return 0


def cmd_evaluate(args) -> int:
    reports = evaluate_checkpoint(args.checkpoint, split=args.split)
    print(json.dumps({task: report.to_dict() for task, report in reports.items()},
                     indent=2))
    return 0


def cmd_sweep(args) -> int:
    betas = [float(b) for b in args.betas.split(",") if b.strip()]
    results = sweep_beta(_load_config(args), betas)
    print(json.dumps([r.to_dict() for r in results], indent=2))
    return 0


def cmd_report(args) -> int:
    if args.runs:
        results = load_results(args.runs)
    else:
        results = discover_results(args.runs_root)
    if not results:
        raise ConfigError([f"no run results found under {args.runs_root!r}"])
    display, csv_text = report_table(results, args.task)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".txt").write_text(display, encoding="utf-8")
        out.with_suffix(".csv").write_text(csv_text, encoding="utf-8")
    print(display, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtltext",
        description="Train and evaluate single-task / multitask text classifiers "
                    "for depression and stress detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_options(p, with_family=True):
        p.add_argument("--config", required=True, help="experiment config yaml")
        if with_family:
            p.add_argument("--family", choices=sorted(FAMILY_ALIASES),
                           help="override the config's model family")
            p.add_argument("--beta", type=float, help="override the joint-loss beta")
        p.add_argument("--task", choices=TASKS, help="task for stl runs")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--run-id", dest="run_id", help="override the run id")

    p = sub.add_parser("ingest", help="load datasets, split, and write split manifests")
    add_config_options(p)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("train", help="run one training experiment")
    add_config_options(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("transfer", help="train on one task, fine-tune on the other")
    add_config_options(p, with_family=False)
    p.add_argument("--source", required=True, choices=TASKS)
    p.add_argument("--target", required=True, choices=TASKS)
    p.add_argument("--source-lr", type=float, default=1e-4)
    p.add_argument("--target-lr", type=float, default=1e-5)
    p.set_defaults(handler=cmd_transfer)

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint on a split")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", help="run one experiment per beta value")
    add_config_options(p)
    p.add_argument("--betas", required=True,
                   help="comma-separated beta values, e.g. 0.01,0.1,0.2,0.3")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("report", help="render the comparison table for one task")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--runs", nargs="*", help="run directories (or result.json files)")
    p.add_argument("--runs-root", default="runs",
                   help="scan this directory when --runs is not given")
    p.add_argument("--out", help="write table files (suffix .txt/.csv added)")
    p.set_defaults(handler=cmd_report)
    return parser


def _error_record(exc: Exception) -> dict:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        record["problems"] = exc.problems
    return record


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ConfigError, IngestError, ValueError) as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 2
    except (TrainingDiverged, Exception) as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
