"""Experiment orchestration: runs, transfer runs, beta sweeps and reports.

Every run gets its own directory containing the config snapshot, split
manifests, training history, best checkpoint, and the final result, so a
reported table row is reconstructible from its directory alone. Test-split
metrics are computed once, after training, from the restored best epoch.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import torch

from .checkpoints import Checkpoint, load_checkpoint, restore_model, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .corpus import (
    LabeledPost,
    SplitCorpus,
    TASKS,
    load_dataset,
    split_corpus,
    write_split_manifest,
)
from .metrics import METRIC_NAMES, MetricsReport, compute_metrics, confusion
from .models import build_model, classify, parameter_partition
from .training import TrainingHistory, transfer_train, train_mtl, train_stl

logger = logging.getLogger(__name__)

STRATEGIES = ("Transfer Learning", "Single-Task Learning", "Multi-Task Learning")
FAMILY_LABELS = {
    "stl": "Stacked Encoders",
    "double_encoders": "Double Encoders",
    "attention_fusion": "Attention Fusion Network",
}


@dataclass
class RunResult:
    run_id: str
    family: str
    strategy: str
    label: str
    beta: float | None
    best_epoch: int
    seed: int
    metrics: dict[str, MetricsReport]
    checkpoint: str

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "family": self.family,
            "strategy": self.strategy,
            "label": self.label,
            "beta": self.beta,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
            "metrics": {task: report.to_dict() for task, report in self.metrics.items()},
            "checkpoint": self.checkpoint,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunResult":
        return cls(
            run_id=raw["run_id"],
            family=raw["family"],
            strategy=raw["strategy"],
            label=raw["label"],
            beta=raw["beta"],
            best_epoch=raw["best_epoch"],
            seed=raw["seed"],
            metrics={task: MetricsReport.from_dict(rep)
                     for task, rep in raw["metrics"].items()},
            checkpoint=raw["checkpoint"],
        )


def evaluate_model(model: torch.nn.Module, posts: Sequence[LabeledPost], task: str,
                   batch_size: int = 32) -> MetricsReport:
    """Deterministic inference over posts followed by the five-metric report."""
    if not posts:
        raise ValueError("cannot evaluate on an empty split")
    model.eval()
    predictions: list[int] = []
    with torch.no_grad():
        for start in range(0, len(posts), batch_size):
            batch = posts[start:start + batch_size]
            ids, mask = model.tokenizer.tokenize_batch([p.text for p in batch])
            logits = model.task_logits(task, ids, mask)
            labels, _ = classify(logits)
            predictions.extend(labels.tolist())
    return compute_metrics(confusion(predictions, [p.label for p in posts]))


def _prepare_run_dir(config: ExperimentConfig) -> Path:
    run_dir = Path(config.output_dir) / config.run_id
    if run_dir.exists():
        raise ConfigError([f"run directory already exists: {run_dir} "
                           "(run ids must be unique per output directory)"])
    run_dir.mkdir(parents=True)
    config.to_yaml(run_dir / "config.yaml")
    return run_dir


def load_splits(config: ExperimentConfig, run_dir: Path | None = None
                ) -> dict[str, SplitCorpus]:
    """Ingest and split every task the config needs; optionally persist manifests."""
    splits: dict[str, SplitCorpus] = {}
    for task in config.required_tasks():
        source = config.data[task]
        posts = load_dataset(source.path, task, source.schema())
        splits[task] = split_corpus(posts, seed=config.seed)
        if run_dir is not None:
            write_split_manifest(splits[task], run_dir / f"split_{task}.csv")
    return splits


def _write_history(run_dir: Path, history: TrainingHistory, name: str = "history.json") -> None:
    (run_dir / name).write_text(json.dumps(history.to_dict(), indent=2), encoding="utf-8")


def _checkpoint_callback(run_dir: Path, config: ExperimentConfig, partition,
                         subdir: str = "checkpoints/best", lineage: str | None = None):
    def callback(model, epoch, record):
        save_checkpoint(
            run_dir / subdir, model,
            run_id=config.run_id,
            config_snapshot=config.to_dict(),
            epoch=epoch,
            val_losses=record.val_loss,
            partition=partition,
            lineage=lineage,
        )
    return callback


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Ingest, split, train, evaluate on the test split, persist everything."""
    config.validate()
    run_dir = _prepare_run_dir(config)
    splits = load_splits(config, run_dir)
    (run_dir / "split_composition.json").write_text(
        json.dumps({task: corpus.composition() for task, corpus in splits.items()},
                   indent=2), encoding="utf-8")

    dtype = config.torch_dtype()
    model = build_model(config.family, config.encoder, seed=config.seed,
                        task=config.task, dtype=dtype)
    partition = parameter_partition(model)
    callback = _checkpoint_callback(run_dir, config, partition)

    if config.family == "stl":
        corpus = splits[config.task]
        model, history = train_stl(model, corpus.train, corpus.validation,
                                   config.train, on_improvement=callback)
        beta = None
    else:
        model, history = train_mtl(
            model,
            {task: splits[task].train for task in TASKS},
            {task: splits[task].validation for task in TASKS},
            config.train, on_improvement=callback)
        beta = config.train.beta
    _write_history(run_dir, history)

    metrics = {task: evaluate_model(model, splits[task].test, task)
               for task in config.required_tasks()}
    result = RunResult(
        run_id=config.run_id,
        family=config.family,
        strategy="Single-Task Learning" if config.family == "stl" else "Multi-Task Learning",
        label=FAMILY_LABELS[config.family],
        beta=beta,
        best_epoch=history.best_epoch,
        seed=config.seed,
        metrics=metrics,
        checkpoint=str(run_dir / "checkpoints/best"),
    )
    (run_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2),
                                         encoding="utf-8")
    logger.info("run %s finished: best epoch %d", config.run_id, history.best_epoch)
    return result


def run_transfer(config: ExperimentConfig, source_task: str, target_task: str,
                 source_lr: float = 1e-4, target_lr: float = 1e-5) -> RunResult:
    """Transfer baseline: STL on the source task, fine-tune on the target."""
    if source_task == target_task:
        raise ConfigError(["source and target task must differ"])
    # validate once per phase task so both data sources are checked up front
    replace(config, family="stl", task=source_task).validate()
    config = replace(config, family="stl", task=target_task)
    config.validate()
    run_dir = _prepare_run_dir(config)
    splits = {}
    for task in TASKS:
        source = config.data.get(task)
        if source is None:
            raise ConfigError([f"missing data source for task {task!r}"])
        posts = load_dataset(source.path, task, source.schema())
        splits[task] = split_corpus(posts, seed=config.seed)
        write_split_manifest(splits[task], run_dir / f"split_{task}.csv")

    phase1_id = f"{config.run_id}@phase1"

    def phase1_callback(model, epoch, record):
        save_checkpoint(run_dir / "checkpoints/phase1_best", model,
                        run_id=config.run_id, config_snapshot=config.to_dict(),
                        epoch=epoch, val_losses=record.val_loss,
                        partition=parameter_partition(model))

    def phase2_callback(model, epoch, record):
        save_checkpoint(run_dir / "checkpoints/best", model,
                        run_id=config.run_id, config_snapshot=config.to_dict(),
                        epoch=epoch, val_losses=record.val_loss,
                        partition=parameter_partition(model),
                        lineage=phase1_id)

    outcome = transfer_train(
        source_task, target_task, splits, config.encoder, config.train,
        source_lr=source_lr, target_lr=target_lr, dtype=config.torch_dtype(),
        on_source_improvement=phase1_callback,
        on_target_improvement=phase2_callback,
    )
    _write_history(run_dir, outcome.source_history, "history_source.json")
    _write_history(run_dir, outcome.target_history, "history.json")

    metrics = {target_task: evaluate_model(outcome.model, splits[target_task].test,
                                           target_task)}
    result = RunResult(
        run_id=config.run_id,
        family="stl",
        strategy="Transfer Learning",
        label=f"Transfer {source_task} to {target_task}",
        beta=None,
        best_epoch=outcome.target_history.best_epoch,
        seed=config.seed,
        metrics=metrics,
        checkpoint=str(run_dir / "checkpoints/best"),
    )
    (run_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2),
                                         encoding="utf-8")
    return result


def evaluate_checkpoint(checkpoint_dir: str | Path, split: str = "test"
                        ) -> dict[str, MetricsReport]:
    """Restore a checkpoint, rebuild its splits from the snapshot, evaluate."""
    checkpoint: Checkpoint = load_checkpoint(checkpoint_dir)
    config = ExperimentConfig.from_dict(checkpoint.manifest["config"])
    model = restore_model(checkpoint)
    splits = load_splits(config)
    tasks = (model.task,) if model.family == "stl" else TASKS
    return {task: evaluate_model(model, splits[task].posts(split), task)
            for task in tasks}


def sweep_beta(config: ExperimentConfig, betas: Sequence[float]) -> list[RunResult]:
    """One run per beta with a shared split/init seed; emits metric curves.

    Runs differ only in beta, so the split manifests and encoder
    initialization are identical across the sweep. Per-task accuracy/F1
    curves are always written as csv; rendered plots are best-effort.
    """
    if not betas:
        raise ConfigError(["betas must be non-empty"])
    bad = [b for b in betas if not 0.0 <= b <= 1.0]
    if bad:
        raise ConfigError([f"betas out of [0, 1]: {bad}"])
    if config.family == "stl":
        raise ConfigError(["beta sweeps apply to multitask families only"])
    config.validate()

    results = []
    for beta in betas:
        run_config = replace(
            config,
            run_id=f"{config.run_id}-beta{beta:g}",
            train=replace(config.train, beta=beta),
        )
        results.append(run_experiment(run_config))

    sweep_dir = Path(config.output_dir) / f"{config.run_id}-sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "results.json").write_text(
        json.dumps([r.to_dict() for r in results], indent=2), encoding="utf-8")
    for task in TASKS:
        _write_curve(sweep_dir, task, results)
    return results


def _write_curve(sweep_dir: Path, task: str, results: list[RunResult]) -> None:
    rows = sorted((r.beta, r.metrics[task]) for r in results)
    csv_path = sweep_dir / f"curve_{task}.csv"
    lines = ["beta,accuracy,f1"]
    for beta, report in rows:
        lines.append(f"{beta:g},{report.as_percent('accuracy'):.2f},"
                     f"{report.as_percent('f1'):.2f}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        betas = [beta for beta, _ in rows]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        for ax, metric in zip(axes, ("accuracy", "f1")):
            ax.plot(betas, [rep.as_percent(metric) for _, rep in rows], marker="o")
            ax.set_xlabel("beta")
            ax.set_ylabel(f"{metric} (%)")
            ax.set_title(f"{task}: {metric} vs beta")
            ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(sweep_dir / f"curve_{task}.png", dpi=120)
        plt.close(fig)
    except Exception as exc:  # plot rendering must never fail a sweep
        logger.warning("skipping plot for %s: %s", task, exc)


def report_table(results: Sequence[RunResult], task: str) -> tuple[str, str]:
    """Comparison table for one task, grouped by strategy.

    Returns (display_text, csv_text). Results lacking metrics for the task
    are skipped.
    """
    if not results:
        raise ValueError("no results to report")
    relevant = [r for r in results if task in r.metrics]
    header = ["Architecture", "Precision", "Recall", "F1-score", "Accuracy", "Specificity"]
    display_rows: list[list[str]] = []
    csv_lines = ["strategy,run_id," + ",".join(h.lower() for h in header)]
    for strategy in STRATEGIES:
        group = [r for r in relevant if r.strategy == strategy]
        if not group:
            continue
        display_rows.append([f"-- {strategy} --"])
        for result in group:
            report = result.metrics[task]
            cells = [f"{report.as_percent(name):.2f}" for name in METRIC_NAMES]
            display_rows.append([result.label] + cells)
            csv_lines.append(",".join([strategy, result.run_id, result.label] + cells))

    widths = [max(len(header[i]), *(len(row[i]) for row in display_rows if len(row) > 1))
              for i in range(len(header))] if display_rows else [len(h) for h in header]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    for row in display_rows:
        if len(row) == 1:
            lines.append(row[0])
        else:
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"


def load_results(paths: Sequence[str | Path]) -> list[RunResult]:
    """Load result.json files from run directories (or direct file paths)."""
    results = []
    for path in paths:
        path = Path(path)
        if path.is_dir():
            path = path / "result.json"
        results.append(RunResult.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return results


def discover_results(root: str | Path) -> list[RunResult]:
    """Collect every completed run result under an output directory."""
    root = Path(root)
    return load_results(sorted(p for p in root.glob("*/result.json")))
