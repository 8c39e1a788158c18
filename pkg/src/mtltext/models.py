"""Model families: stacked single-task encoders and the two multitask graphs.

All three families end in an independent two-unit classification head per
task and consume the fixed-length token ids / attention masks produced by an
encoder backend's tokenizer:

* ``stl``: one post runs through two stacked encoders (the first encoder's
  output sequence is injected into the second as input embeddings), then a
  head.
* ``double_encoders``: a shared encoder feeds its output sequence into one
  task-specific encoder per task (stacked sharing).
* ``attention_fusion``: shared and task-specific encoders read the raw
  tokens in parallel; their pooled vectors are combined by a learned two-way
  softmax gate before the head.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import TASKS
from .encoders import (
    EncoderConfig,
    SequenceRepresentation,
    build_encoder,
    build_tokenizer,
    pool_cls,
    seeded_uniform_init_,
)

MODEL_FAMILIES = ("stl", "double_encoders", "attention_fusion")

# Gate hidden widths are fixed; only the input layer scales with encoder width.
GATE_HIDDEN = (768, 128)


class ClassifierHead(nn.Linear):
    """Dense layer with two output units producing the task logits."""

    def __init__(self, width: int):
        super().__init__(width, 2)


class FusionGate(nn.Module):
    """Two-way softmax gate over [h_task ; h_shared].

    Two ReLU dense layers (768 and 128 units) followed by a two-unit softmax
    layer. Output column 0 weights the task-specific vector, column 1 the
    shared vector; the two weights are positive and sum to 1.
    """

    def __init__(self, width: int):
        super().__init__()
        self.layer1 = nn.Linear(2 * width, GATE_HIDDEN[0])
        self.layer2 = nn.Linear(GATE_HIDDEN[0], GATE_HIDDEN[1])
        self.layer3 = nn.Linear(GATE_HIDDEN[1], 2)

    def forward(self, h_task: torch.Tensor, h_shared: torch.Tensor) -> torch.Tensor:
        if h_task.shape != h_shared.shape:
            raise ValueError(
                f"fusion inputs must match: {tuple(h_task.shape)} vs {tuple(h_shared.shape)}"
            )
        h = torch.cat([h_task, h_shared], dim=-1)
        h = F.relu(self.layer1(h))
        h = F.relu(self.layer2(h))
        return self.layer3(h).softmax(dim=-1)


def attention_fusion(h_task: torch.Tensor, h_shared: torch.Tensor,
                     gate: FusionGate) -> tuple[torch.Tensor, torch.Tensor]:
    """Convex combination of the two vectors under the gate's weights.

    Returns (fused, weights) where weights[..., 0] scales h_task and
    weights[..., 1] scales h_shared.
    """
    weights = gate(h_task, h_shared)
    fused = weights[..., 0:1] * h_task + weights[..., 1:2] * h_shared
    return fused, weights


class StackedEncoderModel(nn.Module):
    """Single-task model: two stacked encoders and one head."""

    family = "stl"

    def __init__(self, task: str, config: EncoderConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        self.task = task
        self.encoder_config = config
        self.tokenizer = build_tokenizer(config)
        self.bottom_encoder = build_encoder(config, dtype=dtype)
        self.top_encoder = build_encoder(config, dtype=dtype)
        self.head = ClassifierHead(self.bottom_encoder.width)
        self.to(dtype)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        bottom = self.bottom_encoder(input_ids, attention_mask)
        top = self.top_encoder.forward_embeddings(bottom.hidden, attention_mask)
        return self.head(pool_cls(top))

    def task_logits(self, task: str, input_ids: torch.Tensor,
                    attention_mask: torch.Tensor) -> torch.Tensor:
        if task != self.task:
            raise ValueError(f"model is bound to task {self.task!r}, asked for {task!r}")
        return self(input_ids, attention_mask)

    @property
    def tasks(self) -> tuple[str, ...]:
        return (self.task,)


class DoubleEncodersModel(nn.Module):
    """Multitask model with a shared encoder stacked under per-task encoders."""

    family = "double_encoders"

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.encoder_config = config
        self.tokenizer = build_tokenizer(config)
        self.shared_encoder = build_encoder(config, dtype=dtype)
        self.task_encoders = nn.ModuleDict(
            {task: build_encoder(config, dtype=dtype) for task in TASKS})
        self.heads = nn.ModuleDict(
            {task: ClassifierHead(self.shared_encoder.width) for task in TASKS})
        self.to(dtype)

    def task_logits(self, task: str, input_ids: torch.Tensor,
                    attention_mask: torch.Tensor) -> torch.Tensor:
        shared = self.shared_encoder(input_ids, attention_mask)
        rep = self.task_encoders[task].forward_embeddings(shared.hidden, attention_mask)
        return self.heads[task](pool_cls(rep))

    def forward_pair(self, batches: dict[str, tuple[torch.Tensor, torch.Tensor]]
                     ) -> dict[str, torch.Tensor]:
        """Logits for both tasks; the shared encoder processes both batches."""
        missing = [t for t in TASKS if t not in batches]
        if missing:
            raise ValueError(f"joint forward needs both tasks, missing {missing}")
        return {task: self.task_logits(task, ids, mask)
                for task, (ids, mask) in batches.items()}

    @property
    def tasks(self) -> tuple[str, ...]:
        return TASKS


class AttentionFusionModel(nn.Module):
    """Multitask model with parallel shared/task encoders and fusion gates."""

    family = "attention_fusion"

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.encoder_config = config
        self.tokenizer = build_tokenizer(config)
        self.shared_encoder = build_encoder(config, dtype=dtype)
        self.task_encoders = nn.ModuleDict(
            {task: build_encoder(config, dtype=dtype) for task in TASKS})
        self.gates = nn.ModuleDict(
            {task: FusionGate(self.shared_encoder.width) for task in TASKS})
        self.heads = nn.ModuleDict(
            {task: ClassifierHead(self.shared_encoder.width) for task in TASKS})
        self.to(dtype)

    def forward_task(self, task: str, input_ids: torch.Tensor, attention_mask: torch.Tensor
                     ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (logits, fusion weights). Both encoders read raw tokens."""
        h_shared = pool_cls(self.shared_encoder(input_ids, attention_mask))
        h_task = pool_cls(self.task_encoders[task](input_ids, attention_mask))
        fused, weights = attention_fusion(h_task, h_shared, self.gates[task])
        return self.heads[task](fused), weights

    def task_logits(self, task: str, input_ids: torch.Tensor,
                    attention_mask: torch.Tensor) -> torch.Tensor:
        logits, _ = self.forward_task(task, input_ids, attention_mask)
        return logits

    @property
    def tasks(self) -> tuple[str, ...]:
        return TASKS


def classify(logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Softmax + argmax decision; exact ties resolve to class 0.

    Accepts (..., 2) logits; returns (labels, probabilities).
    """
    if not torch.isfinite(logits).all():
        raise ValueError("cannot classify non-finite logits")
    probabilities = logits.softmax(dim=-1)
    labels = (probabilities[..., 1] > probabilities[..., 0]).long()
    return labels, probabilities


def build_model(family: str, config: EncoderConfig, seed: int, task: str | None = None,
                dtype: torch.dtype = torch.float32) -> nn.Module:
    """Assemble a model family with a seeded scaled-uniform initialization.

    ``seed`` drives the weights of the whole graph (one generator walks all
    submodules), independently of the tokenizer's vocabulary seed.
    """
    if family == "stl":
        if task is None:
            raise ValueError("stl models need a task")
        model = StackedEncoderModel(task, config, dtype=dtype)
    elif family == "double_encoders":
        model = DoubleEncodersModel(config, dtype=dtype)
    elif family == "attention_fusion":
        model = AttentionFusionModel(config, dtype=dtype)
    else:
        raise ValueError(f"unknown model family {family!r}; expected one of {MODEL_FAMILIES}")
    seeded_uniform_init_(model, torch.Generator().manual_seed(seed))
    return model


def reseed_head(model: StackedEncoderModel, seed: int) -> None:
    """Re-initialize only the classification head (fresh seeded weights)."""
    seeded_uniform_init_(model.head, torch.Generator().manual_seed(seed))


def parameter_partition(model: nn.Module) -> dict[str, list[str]]:
    """Parameter names owned by each task's optimizer.

    The depression (primary) optimizer owns the shared encoder plus all
    depression-specific parameters; the stress optimizer owns only the
    stress-specific parameters. Single-task models assign everything to
    their one task.
    """
    if model.family == "stl":
        return {model.task: [name for name, _ in model.named_parameters()]}
    partition: dict[str, list[str]] = {task: [] for task in TASKS}
    for name, _ in model.named_parameters():
        parts = name.split(".")
        if "stress" in parts:
            partition["stress"].append(name)
        else:
            # shared-encoder and depression-specific parameters
            partition["depression"].append(name)
    return partition
