"""Dataset ingestion, deterministic 70-10-20 splits, and joint batch pairing.

The two task corpora (depression posts, stress posts) arrive as delimited
text files with an explicit column mapping. Splitting is a seeded uniform
shuffle followed by a contiguous cut; no stratification is applied, but the
class composition of each split is logged so the choice stays auditable.
"""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

logger = logging.getLogger(__name__)

TASKS = ("depression", "stress")
PRIMARY_TASK = "depression"
AUXILIARY_TASK = "stress"
SPLIT_NAMES = ("train", "validation", "test")
SPLIT_RATIOS = (0.70, 0.10, 0.20)


class IngestError(ValueError):
    """An input file violates the ingestion contract."""


@dataclass(frozen=True)
class LabeledPost:
    """One labeled post. label 1 = positive (depressive/stressful)."""

    id: str
    text: str
    label: int
    task: str
    split: str | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if not self.text.strip():
            raise ValueError("text must be non-empty after whitespace trim")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.split is not None and self.split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class ColumnSchema:
    """Column mapping for a delimited dataset file."""

    text_column: str
    label_column: str
    id_column: str | None = None
    delimiter: str = ","


def load_dataset(path: str | Path, task: str, schema: ColumnSchema) -> list[LabeledPost]:
    """Read one task's posts from a delimited file, preserving row order.

    Row numbers in error messages are 1-based file lines (the header is
    line 1). Rows with an unparseable label or empty text are collected and
    reported together.
    """
    path = Path(path)
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not path.exists():
        raise IngestError(f"dataset file not found: {path}")

    posts: list[LabeledPost] = []
    problems: list[str] = []
    seen_ids: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        needed = [schema.text_column, schema.label_column]
        if schema.id_column:
            needed.append(schema.id_column)
        missing = [col for col in needed if col not in header]
        if missing:
            raise IngestError(f"{path}: missing column(s) {missing}; header has {header}")
        for index, row in enumerate(reader):
            line = index + 2  # header occupies line 1
            text = (row.get(schema.text_column) or "").strip()
            raw_label = (row.get(schema.label_column) or "").strip()
            if not text:
                problems.append(f"row {line}: empty text")
                continue
            try:
                label = int(raw_label)
            except ValueError:
                problems.append(f"row {line}: unparseable label {raw_label!r}")
                continue
            if label not in (0, 1):
                problems.append(f"row {line}: label must be 0 or 1, got {raw_label!r}")
                continue
            if schema.id_column:
                post_id = (row.get(schema.id_column) or "").strip()
                if not post_id:
                    problems.append(f"row {line}: empty id")
                    continue
                if post_id in seen_ids:
                    problems.append(f"row {line}: duplicate id {post_id!r}")
                    continue
                seen_ids.add(post_id)
            else:
                post_id = f"{task}-{index:06d}"
            posts.append(LabeledPost(id=post_id, text=text, label=label, task=task))
    if problems:
        shown = problems[:20]
        more = f" (+{len(problems) - 20} more)" if len(problems) > 20 else ""
        raise IngestError(f"{path}: {len(problems)} bad row(s): " + "; ".join(shown) + more)
    positives = sum(p.label for p in posts)
    logger.info(
        "loaded %d %s posts from %s (%d positive / %d negative)",
        len(posts), task, path, positives, len(posts) - positives,
    )
    return posts


def split_sizes(n: int) -> tuple[int, int, int]:
    """70/10/20 partition sizes; train and validation round half-up, remainder to test."""
    train = (7 * n + 5) // 10
    validation = (n + 5) // 10
    return train, validation, n - train - validation


@dataclass
class SplitCorpus:
    """A 70-10-20 partition of one task's posts."""

    train: list[LabeledPost]
    validation: list[LabeledPost]
    test: list[LabeledPost]
    seed: int | None = None
    ratios: tuple[float, float, float] = SPLIT_RATIOS

    def posts(self, split: str) -> list[LabeledPost]:
        if split not in SPLIT_NAMES:
            raise ValueError(f"unknown split {split!r}")
        return getattr(self, split)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    @property
    def task(self) -> str:
        return self.train[0].task

    def composition(self) -> dict[str, dict[str, int]]:
        out = {}
        for name in SPLIT_NAMES:
            posts = self.posts(name)
            positives = sum(p.label for p in posts)
            out[name] = {"total": len(posts), "positive": positives,
                         "negative": len(posts) - positives}
        return out


def split_corpus(posts: Sequence[LabeledPost], seed: int) -> SplitCorpus:
    """Seeded uniform shuffle, then a contiguous 70/10/20 cut.

    Deterministic: the same (posts, seed) always yields the same partition.
    """
    n = len(posts)
    if n < 10:
        raise ValueError(f"refusing to split {n} posts; need at least 10")
    ids = [p.id for p in posts]
    if len(set(ids)) != n:
        raise ValueError("post ids must be unique within a corpus")
    order = list(posts)
    random.Random(seed).shuffle(order)
    n_train, n_val, _ = split_sizes(n)
    corpus = SplitCorpus(
        train=[replace(p, split="train") for p in order[:n_train]],
        validation=[replace(p, split="validation") for p in order[n_train:n_train + n_val]],
        test=[replace(p, split="test") for p in order[n_train + n_val:]],
        seed=seed,
    )
    for name, stats in corpus.composition().items():
        logger.info(
            "split %s/%s: %d posts (%d positive, %d negative)",
            corpus.task, name, stats["total"], stats["positive"], stats["negative"],
        )
    return corpus


def write_split_manifest(corpus: SplitCorpus, path: str | Path) -> None:
    """Persist (id, split) rows so the partition is reconstructible without the seed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "split"])
        for name in SPLIT_NAMES:
            for post in corpus.posts(name):
                writer.writerow([post.id, name])


def read_split_manifest(path: str | Path) -> dict[str, str]:
    path = Path(path)
    assignment: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            assignment[row["id"]] = row["split"]
    return assignment


def apply_split_manifest(posts: Sequence[LabeledPost], assignment: dict[str, str]) -> SplitCorpus:
    """Rebuild a SplitCorpus from a persisted manifest."""
    buckets: dict[str, list[LabeledPost]] = {name: [] for name in SPLIT_NAMES}
    for post in posts:
        split = assignment.get(post.id)
        if split is None:
            raise ValueError(f"post {post.id!r} missing from split manifest")
        buckets[split].append(replace(post, split=split))
    return SplitCorpus(train=buckets["train"], validation=buckets["validation"],
                       test=buckets["test"], seed=None)


@dataclass(frozen=True)
class TaskBatchPair:
    """One depression batch and one stress batch, presented jointly."""

    depression: list[LabeledPost]
    stress: list[LabeledPost]

    def batch(self, task: str) -> list[LabeledPost]:
        return getattr(self, task)


def _guard_training_posts(posts: Sequence[LabeledPost], role: str) -> None:
    if not posts:
        raise ValueError(f"{role} is empty")
    for post in posts:
        if post.split == "test":
            raise ValueError(
                f"{role} contains test-split post {post.id!r}; "
                "test data is reserved for final evaluation"
            )


class PairedStream:
    """Per-epoch stream of TaskBatchPair over two unequal datasets.

    Epoch length follows the longer dataset: ceil(len(longer) / batch_size)
    pairs, the longer side chunked so every example appears exactly once.
    The shorter side cycles, reshuffling on each wrap. Each epoch's order is
    deterministic in (seed, epoch). A single epoch iterator has one consumer.
    """

    def __init__(self, depression: Sequence[LabeledPost], stress: Sequence[LabeledPost],
                 batch_size: int, seed: int):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        _guard_training_posts(depression, "depression stream")
        _guard_training_posts(stress, "stress stream")
        self.depression = list(depression)
        self.stress = list(stress)
        self.batch_size = batch_size
        self.seed = seed

    @property
    def pairs_per_epoch(self) -> int:
        longest = max(len(self.depression), len(self.stress))
        return math.ceil(longest / self.batch_size)

    def epoch(self, index: int) -> Iterator[TaskBatchPair]:
        rng = random.Random(self.seed * 1_000_003 + index)
        depression = list(self.depression)
        stress = list(self.stress)
        rng.shuffle(depression)
        rng.shuffle(stress)
        pairs = self.pairs_per_epoch
        if len(depression) >= len(stress):
            long_batches = _chunks(depression, self.batch_size)
            short_batches = _cycling_batches(stress, self.batch_size, pairs, rng)
            for long_b, short_b in zip(long_batches, short_batches):
                yield TaskBatchPair(depression=long_b, stress=short_b)
        else:
            long_batches = _chunks(stress, self.batch_size)
            short_batches = _cycling_batches(depression, self.batch_size, pairs, rng)
            for long_b, short_b in zip(long_batches, short_batches):
                yield TaskBatchPair(depression=short_b, stress=long_b)


def _chunks(items: list, size: int) -> Iterator[list]:
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _cycling_batches(items: list, size: int, count: int, rng: random.Random) -> Iterator[list]:
    order = list(items)  # caller already shuffled; reshuffle only on wrap
    pos = 0
    for _ in range(count):
        batch = []
        while len(batch) < size:
            if pos >= len(order):
                rng.shuffle(order)
                pos = 0
            batch.append(order[pos])
            pos += 1
        yield batch


def make_paired_stream(depression: Sequence[LabeledPost], stress: Sequence[LabeledPost],
                       batch_size: int, seed: int) -> PairedStream:
    return PairedStream(depression, stress, batch_size=batch_size, seed=seed)


def single_task_batches(posts: Sequence[LabeledPost], batch_size: int,
                        seed: int, epoch: int) -> Iterator[list[LabeledPost]]:
    """One epoch of shuffled batches over a single task's posts."""
    _guard_training_posts(posts, "training stream")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(posts)
    random.Random(seed * 1_000_003 + epoch).shuffle(order)
    yield from _chunks(order, batch_size)
