"""Training engines: joint loss, per-task Adam optimizers, step decay,
early stopping, and the single-task / multitask / transfer pipelines.

The joint objective is ``total = (1 - beta) * loss_depression +
beta * loss_stress``. "Each task has its own optimizer" is realized as a
parameter partition: the depression optimizer owns the shared encoder plus
depression-specific parameters, the stress optimizer owns stress-specific
parameters, and a single backward pass on the joint loss feeds both. The
partition is recorded in every checkpoint manifest.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import (
    LabeledPost,
    PairedStream,
    SplitCorpus,
    TASKS,
    make_paired_stream,
    single_task_batches,
)
from .models import StackedEncoderModel, build_model, parameter_partition, reseed_head

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    lr_step_size: int = 5
    lr_gamma: float = 0.1
    batch_size: int = 4
    max_epochs: int = 15
    patience: int = 8
    beta: float = 0.01
    seed: int = 0
    epoch_selection: str = "min_val_loss"

    def validate(self) -> list[str]:
        problems = []
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if not 0 < self.patience <= self.max_epochs:
            problems.append("patience must satisfy 0 < patience <= max_epochs")
        if not 0.0 <= self.beta <= 1.0:
            problems.append(f"beta must lie in [0, 1], got {self.beta}")
        if self.lr_step_size < 1:
            problems.append("lr_step_size must be >= 1")
        if self.epoch_selection != "min_val_loss":
            problems.append("only min_val_loss epoch selection is supported")
        return problems

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "lr_step_size": self.lr_step_size,
            "lr_gamma": self.lr_gamma,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "beta": self.beta,
            "seed": self.seed,
            "epoch_selection": self.epoch_selection,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class LossBreakdown:
    """Per-task losses and their beta-weighted total."""

    loss_depression: object
    loss_stress: object
    beta: float
    total: object


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy; log-softmax is computed in fused stable form."""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
        labels = labels.reshape(1)
    return F.cross_entropy(logits, labels)


def joint_loss(loss_depression, loss_stress, beta: float) -> LossBreakdown:
    """Weighted joint objective; beta trades auxiliary against primary loss."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    total = (1.0 - beta) * loss_depression + beta * loss_stress
    return LossBreakdown(loss_depression=loss_depression, loss_stress=loss_stress,
                         beta=beta, total=total)


def step_lr(base_lr: float, epoch: int, step_size: int = 5, gamma: float = 0.1) -> float:
    """Learning rate after step decay: base * gamma ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * gamma ** (epoch // step_size)


class EarlyStopping:
    """Stop after `patience` consecutive epochs without a strict improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_index = -1
        self.bad_epochs = 0
        self.count = 0

    def update(self, value: float) -> bool:
        """Record one epoch's monitored value; returns True when training should halt."""
        index = self.count
        self.count += 1
        if value < self.best:
            self.best = value
            self.best_index = index
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: dict[str, float]
    val_loss: dict[str, float]
    joint_val_loss: float
    learning_rate: dict[str, float]
    seconds: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": dict(self.train_loss),
            "val_loss": dict(self.val_loss),
            "joint_val_loss": self.joint_val_loss,
            "learning_rate": dict(self.learning_rate),
            "seconds": self.seconds,
        }


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def monitored(self) -> list[float]:
        return [r.joint_val_loss for r in self.records]

    def best_val_loss(self) -> float:
        return self.records[self.best_epoch].joint_val_loss

    def comparable(self) -> dict:
        """History content without wall-clock times, for determinism checks."""
        out = self.to_dict()
        for record in out["records"]:
            record.pop("seconds")
        return out

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }


ImprovementCallback = Callable[[nn.Module, int, EpochRecord], None]


def _batch_tensors(tokenizer, posts: Sequence[LabeledPost]
                   ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    ids, mask = tokenizer.tokenize_batch([p.text for p in posts])
    labels = torch.tensor([p.label for p in posts], dtype=torch.long)
    return ids, mask, labels


def _eval_task_loss(model: nn.Module, task: str, posts: Sequence[LabeledPost],
                    batch_size: int) -> float:
    """Mean cross-entropy over all examples of one task."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(posts), batch_size):
            batch = posts[start:start + batch_size]
            ids, mask, labels = _batch_tensors(model.tokenizer, batch)
            logits = model.task_logits(task, ids, mask)
            total += F.cross_entropy(logits, labels, reduction="sum").item()
            count += len(batch)
    return total / count


def _snapshot_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train_stl(model: StackedEncoderModel, train_posts: Sequence[LabeledPost],
              val_posts: Sequence[LabeledPost], config: TrainConfig,
              on_improvement: ImprovementCallback | None = None,
              ) -> tuple[StackedEncoderModel, TrainingHistory]:
    """Train a single-task model; returns the model restored to its best epoch.

    Early stopping monitors the validation loss with the configured patience;
    the returned model carries the parameters of the epoch with the smallest
    validation loss.
    """
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if not train_posts:
        raise ValueError("training stream is empty")
    if not val_posts:
        raise ValueError("validation stream is empty")
    task = model.task

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=config.lr_step_size, gamma=config.lr_gamma)
    stopper = EarlyStopping(config.patience)
    history = TrainingHistory()
    best_state: dict[str, torch.Tensor] | None = None

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        model.train()
        loss_sum, seen = 0.0, 0
        for batch in single_task_batches(train_posts, config.batch_size,
                                         config.seed, epoch):
            ids, mask, labels = _batch_tensors(model.tokenizer, batch)
            logits = model(ids, mask)
            loss = cross_entropy(logits, labels)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(batch)
            seen += len(batch)

        val = _eval_task_loss(model, task, val_posts, config.batch_size)
        if not math.isfinite(val):
            raise TrainingDiverged(epoch, "validation loss became non-finite")
        lr_now = optimizer.param_groups[0]["lr"]
        record = EpochRecord(
            epoch=epoch,
            train_loss={task: loss_sum / seen},
            val_loss={task: val},
            joint_val_loss=val,
            learning_rate={task: lr_now},
            seconds=time.perf_counter() - started,
        )
        history.records.append(record)
        stop = stopper.update(val)
        if stopper.best_index == epoch:
            best_state = _snapshot_state(model)
            if on_improvement is not None:
                on_improvement(model, epoch, record)
        logger.debug("stl epoch %d: train %.4f val %.4f lr %.2g",
                     epoch, record.train_loss[task], val, lr_now)
        scheduler.step()
        if stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_index
    model.load_state_dict(best_state)
    return model, history


def train_mtl(model: nn.Module, train_posts: dict[str, Sequence[LabeledPost]],
              val_posts: dict[str, Sequence[LabeledPost]], config: TrainConfig,
              on_improvement: ImprovementCallback | None = None,
              ) -> tuple[nn.Module, TrainingHistory]:
    """Joint training of both tasks with per-task optimizers.

    Every step forwards one batch per task, computes the beta-weighted joint
    loss, backpropagates once, and lets each task's optimizer update its own
    parameter partition. Early stopping monitors the joint validation loss
    at the configured beta.
    """
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    if model.family not in ("double_encoders", "attention_fusion"):
        raise ValueError(f"train_mtl expects a multitask model, got {model.family!r}")
    for task in TASKS:
        if not train_posts.get(task):
            raise ValueError(f"missing {task} training posts")
        if not val_posts.get(task):
            raise ValueError(f"missing {task} validation posts")

    partition = parameter_partition(model)
    named = dict(model.named_parameters())
    optimizers = {
        task: torch.optim.Adam([named[n] for n in partition[task]],
                               lr=config.learning_rate)
        for task in TASKS
    }
    schedulers = {
        task: torch.optim.lr_scheduler.StepLR(
            opt, step_size=config.lr_step_size, gamma=config.lr_gamma)
        for task, opt in optimizers.items()
    }
    stream = make_paired_stream(train_posts["depression"], train_posts["stress"],
                                batch_size=config.batch_size, seed=config.seed)
    stopper = EarlyStopping(config.patience)
    history = TrainingHistory()
    best_state: dict[str, torch.Tensor] | None = None

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        model.train()
        sums = {task: 0.0 for task in TASKS}
        seen = {task: 0 for task in TASKS}
        for pair in stream.epoch(epoch):
            losses = {}
            for task in TASKS:
                batch = pair.batch(task)
                ids, mask, labels = _batch_tensors(model.tokenizer, batch)
                losses[task] = cross_entropy(model.task_logits(task, ids, mask), labels)
                sums[task] += losses[task].item() * len(batch)
                seen[task] += len(batch)
            breakdown = joint_loss(losses["depression"], losses["stress"], config.beta)
            if not torch.isfinite(breakdown.total):
                raise TrainingDiverged(epoch)
            for opt in optimizers.values():
                opt.zero_grad()
            breakdown.total.backward()
            for opt in optimizers.values():
                opt.step()

        val = {task: _eval_task_loss(model, task, val_posts[task], config.batch_size)
               for task in TASKS}
        joint_val = joint_loss(val["depression"], val["stress"], config.beta).total
        if not math.isfinite(joint_val):
            raise TrainingDiverged(epoch, "validation loss became non-finite")
        record = EpochRecord(
            epoch=epoch,
            train_loss={task: sums[task] / seen[task] for task in TASKS},
            val_loss=val,
            joint_val_loss=joint_val,
            learning_rate={task: optimizers[task].param_groups[0]["lr"] for task in TASKS},
            seconds=time.perf_counter() - started,
        )
        history.records.append(record)
        stop = stopper.update(joint_val)
        if stopper.best_index == epoch:
            best_state = _snapshot_state(model)
            if on_improvement is not None:
                on_improvement(model, epoch, record)
        logger.debug("mtl epoch %d: joint val %.4f (%s)", epoch, joint_val, val)
        for sched in schedulers.values():
            sched.step()
        if stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_index
    model.load_state_dict(best_state)
    return model, history


@dataclass
class TransferOutcome:
    model: StackedEncoderModel
    source_history: TrainingHistory
    target_history: TrainingHistory


def transfer_train(source_task: str, target_task: str,
                   splits: dict[str, SplitCorpus], encoder_config,
                   config: TrainConfig, source_lr: float = 1e-4,
                   target_lr: float = 1e-5,
                   dtype: torch.dtype = torch.float32,
                   on_source_improvement: ImprovementCallback | None = None,
                   on_target_improvement: ImprovementCallback | None = None,
                   ) -> TransferOutcome:
    """Train single-task on the source, then fine-tune on the target.

    Phase 1 trains a fresh stacked-encoder model on the source task at
    ``source_lr`` until early stop. Phase 2 keeps the phase-1 best-epoch
    encoders, reinitializes only the classification head (label semantics
    differ between tasks), and trains on the target task at ``target_lr``.
    """
    if source_task == target_task:
        raise ValueError("source and target task must differ")
    for task in (source_task, target_task):
        if task not in splits:
            raise ValueError(f"missing split corpus for task {task!r}")

    model = build_model("stl", encoder_config, seed=config.seed,
                        task=source_task, dtype=dtype)
    source_cfg = replace(config, learning_rate=source_lr)
    model, source_history = train_stl(
        model, splits[source_task].train, splits[source_task].validation,
        source_cfg, on_improvement=on_source_improvement)

    model.task = target_task
    reseed_head(model, config.seed + 1)
    target_cfg = replace(config, learning_rate=target_lr)
    model, target_history = train_stl(
        model, splits[target_task].train, splits[target_task].validation,
        target_cfg, on_improvement=on_target_improvement)
    return TransferOutcome(model=model, source_history=source_history,
                           target_history=target_history)
