"""Binary classification metrics with label 1 as the positive class.

Positive class = depressive / stressful post. All five metrics are kept as
raw fractions in [0, 1]; percentage rounding (2 decimals, half-even) happens
only when a report is rendered or serialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

METRIC_NAMES = ("precision", "recall", "f1", "accuracy", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"confusion count {name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    specificity: float
    degenerate: frozenset[str] = field(default_factory=frozenset)
    counts: ConfusionCounts | None = None

    def value(self, name: str) -> float:
        if name not in METRIC_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def as_percent(self, name: str) -> float:
        """Metric as a percentage rounded to 2 decimals (half-even)."""
        return round(self.value(name) * 100.0, 2)

    def display(self) -> dict[str, str]:
        return {name: f"{self.as_percent(name):.2f}" for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        out = {
            "raw": {name: self.value(name) for name in METRIC_NAMES},
            "percent": {name: self.as_percent(name) for name in METRIC_NAMES},
            "degenerate": sorted(self.degenerate),
        }
        if self.counts is not None:
            out["counts"] = {
                "tp": self.counts.tp,
                "fp": self.counts.fp,
                "fn": self.counts.fn,
                "tn": self.counts.tn,
            }
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        counts = None
        if "counts" in data:
            counts = ConfusionCounts(**data["counts"])
        return cls(
            **{name: data["raw"][name] for name in METRIC_NAMES},
            degenerate=frozenset(data.get("degenerate", ())),
            counts=counts,
        )


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    """Count tp/fp/fn/tn over paired binary predictions and labels."""
    if len(predictions) != len(labels):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if len(predictions) == 0:
        raise ValueError("cannot build a confusion matrix from empty inputs")
    tp = fp = fn = tn = 0
    for pred, lab in zip(predictions, labels):
        pred, lab = int(pred), int(lab)
        if pred not in (0, 1) or lab not in (0, 1):
            raise ValueError(f"non-binary value in inputs: pred={pred} label={lab}")
        if lab == 1:
            if pred == 1:
                tp += 1
            else:
                fn += 1
        else:
            if pred == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int, name: str, degenerate: set[str]) -> float:
    # Zero denominator: report 0 and flag instead of erroring, so evaluation
    # of pathological checkpoints still completes.
    if den == 0:
        degenerate.add(name)
        return 0.0
    return num / den


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    """Precision, recall, F1, accuracy and specificity from confusion counts."""
    if counts.total == 0:
        raise ValueError("no evaluated examples")
    degenerate: set[str] = set()
    precision = _ratio(counts.tp, counts.tp + counts.fp, "precision", degenerate)
    recall = _ratio(counts.tp, counts.tp + counts.fn, "recall", degenerate)
    if precision + recall > 0.0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        degenerate.add("f1")
        f1 = 0.0
    accuracy = (counts.tp + counts.tn) / counts.total
    specificity = _ratio(counts.tn, counts.tn + counts.fp, "specificity", degenerate)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        specificity=specificity,
        degenerate=frozenset(degenerate),
        counts=counts,
    )
