"""Checkpoint persistence: a JSON manifest plus a named-tensor blob.

A checkpoint directory holds ``manifest.json`` (run id, config snapshot,
epoch, parameter-partition map, validation losses, lineage, tensor shapes,
checksum) and ``params.npz`` (one named float array per parameter). The
checksum covers every tensor's name, dtype, shape and raw bytes and is
verified on load, so a corrupted blob fails before any partial use.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.npz"


class CheckpointError(RuntimeError):
    """Checkpoint failed to load or validate."""


def _state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: tensor.detach().cpu().numpy()
            for name, tensor in model.state_dict().items()}


def _checksum(arrays: dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.dtype).encode("utf-8"))
        digest.update(str(arr.shape).encode("utf-8"))
        digest.update(arr.tobytes())
    return digest.hexdigest()


@dataclass
class Checkpoint:
    path: Path
    manifest: dict
    state: dict[str, torch.Tensor]


def save_checkpoint(directory: str | Path, model: torch.nn.Module, *,
                    run_id: str, config_snapshot: dict, epoch: int,
                    val_losses: dict[str, float], partition: dict[str, list[str]],
                    lineage: str | None = None) -> Path:
    """Write manifest + parameter blob; returns the checkpoint directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = _state_arrays(model)
    manifest = {
        "checkpoint_id": f"{run_id}@epoch{epoch}",
        "run_id": run_id,
        "epoch": epoch,
        "family": model.family,
        "task": getattr(model, "task", None),
        "config": config_snapshot,
        "val_losses": val_losses,
        "parameter_partition": partition,
        "lineage": lineage,
        "tensors": {name: {"dtype": str(arr.dtype), "shape": list(arr.shape)}
                    for name, arr in arrays.items()},
        "checksum": _checksum(arrays),
    }
    np.savez(directory / BLOB_NAME, **arrays)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """Load and validate a checkpoint; checksum or shape mismatch raises."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    blob_path = directory / BLOB_NAME
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"not a checkpoint directory: {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    with np.load(blob_path) as blob:
        arrays = {name: blob[name] for name in blob.files}

    expected = manifest.get("tensors", {})
    if set(expected) != set(arrays):
        raise CheckpointError(
            f"tensor names differ from manifest: blob has {sorted(arrays)}, "
            f"manifest lists {sorted(expected)}")
    for name, meta in expected.items():
        if list(arrays[name].shape) != meta["shape"]:
            raise CheckpointError(
                f"shape mismatch for {name}: blob {list(arrays[name].shape)} "
                f"vs manifest {meta['shape']}")
    if _checksum(arrays) != manifest.get("checksum"):
        raise CheckpointError(f"checksum mismatch in {directory}; blob corrupted")

    state = {name: torch.from_numpy(arr.copy()) for name, arr in arrays.items()}
    return Checkpoint(path=directory, manifest=manifest, state=state)


def restore_model(checkpoint: Checkpoint) -> torch.nn.Module:
    """Rebuild the model graph from the manifest config and load its state."""
    from .config import ExperimentConfig  # local import avoids a cycle
    from .models import build_model

    config = ExperimentConfig.from_dict(checkpoint.manifest["config"])
    model = build_model(
        checkpoint.manifest["family"],
        config.encoder,
        seed=config.seed,
        task=checkpoint.manifest.get("task"),
        dtype=config.torch_dtype(),
    )
    try:
        model.load_state_dict(checkpoint.state)
    except RuntimeError as exc:
        raise CheckpointError(f"state does not fit the manifest model graph: {exc}") from exc
    return model
