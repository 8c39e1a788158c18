"""Multitask and single-task training of binary text classifiers.

Trains depression detection (primary task) jointly with stress detection
(auxiliary task) under a beta-weighted cross-entropy objective, alongside
single-task and transfer-learning baselines. Ships a pretrained transformer
backend for full-scale runs and a tiny deterministic encoder for desk-scale
verification.
"""

from .corpus import (
    ColumnSchema,
    LabeledPost,
    PairedStream,
    SplitCorpus,
    TaskBatchPair,
    TASKS,
    load_dataset,
    make_paired_stream,
    split_corpus,
)
from .encoders import EncoderConfig, SequenceRepresentation, TokenizedPost, pool_cls
from .estimators import (
    AttentionFusionClassifier,
    DoubleEncodersClassifier,
    StackedEncoderClassifier,
)
from .metrics import ConfusionCounts, MetricsReport, compute_metrics, confusion
from .models import (
    AttentionFusionModel,
    DoubleEncodersModel,
    FusionGate,
    StackedEncoderModel,
    attention_fusion,
    build_model,
    classify,
)
from .training import (
    EarlyStopping,
    LossBreakdown,
    TrainConfig,
    TrainingHistory,
    cross_entropy,
    joint_loss,
    step_lr,
    train_mtl,
    train_stl,
    transfer_train,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionFusionClassifier",
    "AttentionFusionModel",
    "ColumnSchema",
    "ConfusionCounts",
    "DoubleEncodersClassifier",
    "DoubleEncodersModel",
    "EarlyStopping",
    "EncoderConfig",
    "FusionGate",
    "LabeledPost",
    "LossBreakdown",
    "MetricsReport",
    "PairedStream",
    "SequenceRepresentation",
    "SplitCorpus",
    "StackedEncoderClassifier",
    "StackedEncoderModel",
    "TASKS",
    "TaskBatchPair",
    "TokenizedPost",
    "TrainConfig",
    "TrainingHistory",
    "attention_fusion",
    "build_model",
    "classify",
    "compute_metrics",
    "confusion",
    "cross_entropy",
    "joint_loss",
    "load_dataset",
    "make_paired_stream",
    "pool_cls",
    "split_corpus",
    "step_lr",
    "train_mtl",
    "train_stl",
    "transfer_train",
]
