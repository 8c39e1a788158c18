"""Experiment configuration: one human-readable YAML file per run.

The file is snapshotted verbatim into every checkpoint manifest so a result
row stays reconstructible from its run directory alone. Environment
variables override the output directory (``MTLTEXT_OUTPUT_DIR``) and the
numeric precision (``MTLTEXT_PRECISION`` = float32 | float64).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import torch
import yaml

from .corpus import ColumnSchema, TASKS
from .encoders import EncoderConfig
from .models import MODEL_FAMILIES
from .training import TrainConfig

OUTPUT_DIR_ENV = "MTLTEXT_OUTPUT_DIR"
PRECISION_ENV = "MTLTEXT_PRECISION"
PRECISIONS = ("float32", "float64")


class ConfigError(ValueError):
    """Invalid experiment configuration; carries every detected problem."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(problems))


@dataclass
class DataSource:
    path: str
    text_column: str = "text"
    label_column: str = "label"
    id_column: str | None = None
    delimiter: str = ","

    def schema(self) -> ColumnSchema:
        return ColumnSchema(text_column=self.text_column, label_column=self.label_column,
                            id_column=self.id_column, delimiter=self.delimiter)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "text_column": self.text_column,
            "label_column": self.label_column,
            "id_column": self.id_column,
            "delimiter": self.delimiter,
        }


@dataclass
class ExperimentConfig:
    run_id: str
    output_dir: str
    family: str
    data: dict[str, DataSource]
    task: str | None = None          # stl only
    seed: int = 0
    precision: str = "float32"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == "float64" else torch.float32

    def required_tasks(self) -> tuple[str, ...]:
        if self.family == "stl":
            return (self.task,) if self.task else ()
        return TASKS

    def validate(self) -> None:
        """Collect every problem up front; nothing runs on a bad config."""
        problems: list[str] = []
        if not self.run_id:
            problems.append("run_id must be non-empty")
        if self.family not in MODEL_FAMILIES:
            problems.append(f"unknown family {self.family!r}; expected one of {MODEL_FAMILIES}")
        if self.family == "stl":
            if self.task not in TASKS:
                problems.append(f"stl runs need task set to one of {TASKS}, got {self.task!r}")
        elif self.task is not None:
            problems.append("task is only meaningful for stl runs")
        if self.precision not in PRECISIONS:
            problems.append(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        for task in self.required_tasks():
            source = self.data.get(task)
            if source is None:
                problems.append(f"missing data source for task {task!r}")
            elif not Path(source.path).exists():
                problems.append(f"data file for {task} not found: {source.path}")
        problems.extend(self.encoder.validate())
        problems.extend(self.train.validate())
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "output_dir": self.output_dir,
            "family": self.family,
            "task": self.task,
            "seed": self.seed,
            "precision": self.precision,
            "data": {task: source.to_dict() for task, source in self.data.items()},
            "encoder": self.encoder.to_dict(),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = {task: DataSource(**source) for task, source in (raw.get("data") or {}).items()}
        return cls(
            run_id=raw.get("run_id", ""),
            output_dir=raw.get("output_dir", "runs"),
            family=raw.get("family", ""),
            task=raw.get("task"),
            seed=int(raw.get("seed", 0)),
            precision=raw.get("precision", "float32"),
            data=data,
            encoder=EncoderConfig.from_dict(raw["encoder"]) if "encoder" in raw else EncoderConfig(),
            train=TrainConfig.from_dict(raw["train"]) if "train" in raw else TrainConfig(),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError([f"config file {path} must contain a mapping"])
        config = cls.from_dict(raw)
        config.apply_env_overrides()
        return config

    def apply_env_overrides(self) -> None:
        output_dir = os.environ.get(OUTPUT_DIR_ENV)
        if output_dir:
            self.output_dir = output_dir
        precision = os.environ.get(PRECISION_ENV)
        if precision:
            self.precision = precision

    def to_yaml(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False),
                              encoding="utf-8")
