"""Keyword-separable synthetic corpora for desk-scale runs and smoke tests.

Positive and negative posts draw words from disjoint pools, so a toy model
can reach perfect training accuracy and the pipeline can be exercised end to
end without real data.
"""

from __future__ import annotations

import csv
import random
from pathlib import Path

from .corpus import LabeledPost

POSITIVE_WORDS = {
    "depression": ["hollow", "weary", "fading", "numb", "sleepless", "drained"],
    "stress": ["deadline", "overload", "panicked", "backlog", "scrambling", "frantic"],
}
NEGATIVE_WORDS = {
    "depression": ["sunrise", "garden", "cycling", "picnic", "guitar", "laughing"],
    "stress": ["vacation", "hammock", "strolling", "brunch", "painting", "melody"],
}


def synthetic_posts(task: str, n: int = 64, seed: int = 0) -> list[LabeledPost]:
    """Generate n posts for one task, half positive, half negative."""
    if task not in POSITIVE_WORDS:
        raise ValueError(f"unknown task {task!r}")
    rng = random.Random(seed)
    posts = []
    for i in range(n):
        label = i % 2
        pool = POSITIVE_WORDS[task] if label == 1 else NEGATIVE_WORDS[task]
        words = [rng.choice(pool) for _ in range(rng.randint(3, 6))]
        posts.append(LabeledPost(
            id=f"{task}-synth-{i:04d}",
            text=" ".join(words),
            label=label,
            task=task,
        ))
    return posts


def write_posts_csv(posts: list[LabeledPost], path: str | Path) -> Path:
    """Write posts as a csv with id/text/label columns (ingestable back)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "text", "label"])
        for post in posts:
            writer.writerow([post.id, post.text, post.label])
    return path
