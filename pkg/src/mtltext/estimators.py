"""Scikit-learn style estimators wrapping the training engines.

These classifiers take raw text sequences and binary labels, carve a
validation slice off the training data for early stopping, and delegate to
the package's training pipelines. ``get_params`` / ``set_params`` /
``clone`` work as usual, so the estimators compose with model selection
utilities; a beta sweep is just ``clone(est).set_params(beta=b)``.

Multitask estimators consume two labeled corpora jointly, so the auxiliary
task's data is passed as fit keyword arguments (in the spirit of
``sample_weight``).
"""

from __future__ import annotations

import random

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin

from .corpus import LabeledPost, PRIMARY_TASK, TASKS, split_sizes
from .encoders import EncoderConfig
from .models import build_model, classify
from .training import TrainConfig, train_mtl, train_stl


def _check_texts(X) -> list[str]:
    texts = list(X)
    if not texts:
        raise ValueError("X must contain at least one text")
    for i, text in enumerate(texts):
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"X[{i}] must be a non-empty string")
    return texts


def _check_labels(y, n: int) -> list[int]:
    labels = [int(v) for v in y]
    if len(labels) != n:
        raise ValueError(f"X and y disagree: {n} texts vs {len(labels)} labels")
    bad = sorted({v for v in labels if v not in (0, 1)})
    if bad:
        raise ValueError(f"labels must be binary 0/1, found {bad}")
    return labels


def _as_posts(texts: list[str], labels: list[int], task: str, prefix: str) -> list[LabeledPost]:
    return [LabeledPost(id=f"{prefix}-{i:06d}", text=t, label=lab, task=task)
            for i, (t, lab) in enumerate(zip(texts, labels))]


def _train_val_split(posts: list[LabeledPost], seed: int) -> tuple[list, list]:
    # same 70/10 proportions as the corpus splitter, minus the test share
    order = list(posts)
    random.Random(seed).shuffle(order)
    n_train, n_val, _ = split_sizes(len(order))
    n_train += len(order) - n_train - n_val  # no test slice at fit time
    if n_val == 0:
        raise ValueError("too few examples to carve off a validation slice")
    return order[:n_train], order[n_train:]


class _TextClassifierBase(BaseEstimator):
    """Shared constructor surface and prediction plumbing."""

    def __init__(self, backend="toy", max_length=32, width=16, layers=1, heads=2,
                 ff_width=32, vocab_size=256, learning_rate=1e-5, lr_step_size=5,
                 lr_gamma=0.1, batch_size=4, max_epochs=15, patience=8, seed=0):
        self.backend = backend
        self.max_length = max_length
        self.width = width
        self.layers = layers
        self.heads = heads
        self.ff_width = ff_width
        self.vocab_size = vocab_size
        self.learning_rate = learning_rate
        self.lr_step_size = lr_step_size
        self.lr_gamma = lr_gamma
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed

    def _encoder_config(self) -> EncoderConfig:
        return EncoderConfig(backend=self.backend, max_length=self.max_length,
                             width=self.width, layers=self.layers, heads=self.heads,
                             ff_width=self.ff_width, vocab_size=self.vocab_size,
                             seed=self.seed)

    def _train_config(self, beta: float = 0.0) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate,
                           lr_step_size=self.lr_step_size, lr_gamma=self.lr_gamma,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, beta=beta, seed=self.seed)

    def _predict_logits(self, X, task: str) -> torch.Tensor:
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted yet; call fit first")
        texts = _check_texts(X)
        self.model_.eval()
        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), 64):
                ids, mask = self.model_.tokenizer.tokenize_batch(texts[start:start + 64])
                chunks.append(self.model_.task_logits(task, ids, mask))
        return torch.cat(chunks)


class StackedEncoderClassifier(_TextClassifierBase, ClassifierMixin):
    """Single-task classifier: two stacked encoders and a two-unit head."""

    def __init__(self, task=PRIMARY_TASK, backend="toy", max_length=32, width=16,
                 layers=1, heads=2, ff_width=32, vocab_size=256, learning_rate=1e-5,
                 lr_step_size=5, lr_gamma=0.1, batch_size=4, max_epochs=15,
                 patience=8, seed=0):
        super().__init__(backend=backend, max_length=max_length, width=width,
                         layers=layers, heads=heads, ff_width=ff_width,
                         vocab_size=vocab_size, learning_rate=learning_rate,
                         lr_step_size=lr_step_size, lr_gamma=lr_gamma,
                         batch_size=batch_size, max_epochs=max_epochs,
                         patience=patience, seed=seed)
        self.task = task

    def fit(self, X, y):
        texts = _check_texts(X)
        labels = _check_labels(y, len(texts))
        posts = _as_posts(texts, labels, self.task, "fit")
        train, val = _train_val_split(posts, self.seed)
        model = build_model("stl", self._encoder_config(), seed=self.seed, task=self.task)
        self.model_, self.history_ = train_stl(model, train, val, self._train_config())
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, X) -> np.ndarray:
        logits = self._predict_logits(X, self.task)
        labels, _ = classify(logits)
        return labels.numpy()

    def predict_proba(self, X) -> np.ndarray:
        logits = self._predict_logits(X, self.task)
        _, probabilities = classify(logits)
        return probabilities.numpy()


class _MultitaskClassifierBase(_TextClassifierBase, ClassifierMixin):
    """Joint classifier over the primary (depression) and auxiliary (stress) task.

    ``fit(X, y, aux_texts=..., aux_labels=...)`` trains both tasks jointly;
    ``predict``/``predict_proba`` default to the primary task and accept
    ``task=`` for the auxiliary one.
    """

    family: str = ""

    def __init__(self, beta=0.01, backend="toy", max_length=32, width=16, layers=1,
                 heads=2, ff_width=32, vocab_size=256, learning_rate=1e-5,
                 lr_step_size=5, lr_gamma=0.1, batch_size=4, max_epochs=15,
                 patience=8, seed=0):
        super().__init__(backend=backend, max_length=max_length, width=width,
                         layers=layers, heads=heads, ff_width=ff_width,
                         vocab_size=vocab_size, learning_rate=learning_rate,
                         lr_step_size=lr_step_size, lr_gamma=lr_gamma,
                         batch_size=batch_size, max_epochs=max_epochs,
                         patience=patience, seed=seed)
        self.beta = beta

    def fit(self, X, y, aux_texts=None, aux_labels=None):
        if aux_texts is None or aux_labels is None:
            raise ValueError(
                "multitask fit needs the auxiliary task too: "
                "fit(X, y, aux_texts=..., aux_labels=...)")
        texts = _check_texts(X)
        labels = _check_labels(y, len(texts))
        aux = _check_texts(aux_texts)
        aux_y = _check_labels(aux_labels, len(aux))
        primary = _as_posts(texts, labels, "depression", "fit-depr")
        auxiliary = _as_posts(aux, aux_y, "stress", "fit-stress")
        train_p, val_p = _train_val_split(primary, self.seed)
        train_a, val_a = _train_val_split(auxiliary, self.seed + 1)
        model = build_model(self.family, self._encoder_config(), seed=self.seed)
        self.model_, self.history_ = train_mtl(
            model,
            {"depression": train_p, "stress": train_a},
            {"depression": val_p, "stress": val_a},
            self._train_config(beta=self.beta))
        self.classes_ = np.array([0, 1])
        return self

    def predict(self, X, task: str = PRIMARY_TASK) -> np.ndarray:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        labels, _ = classify(self._predict_logits(X, task))
        return labels.numpy()

    def predict_proba(self, X, task: str = PRIMARY_TASK) -> np.ndarray:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        _, probabilities = classify(self._predict_logits(X, task))
        return probabilities.numpy()


class DoubleEncodersClassifier(_MultitaskClassifierBase):
    """Shared encoder feeding stacked per-task encoders, trained jointly."""

    family = "double_encoders"


class AttentionFusionClassifier(_MultitaskClassifierBase):
    """Parallel shared/task encoders combined by a learned softmax gate."""

    family = "attention_fusion"
