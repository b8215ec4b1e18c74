"""
Checkpoint directories.

A checkpoint is a directory holding
    model.pt        torch state dict (payload format version 1)
    manifest.yaml   CheckpointManifest: architecture, input pipeline, seeds
    trace.csv       optional loss trace, one `step,loss` row per entry
The manifest alone determines how to rebuild the network and which input
pipeline inference must run.
"""

import hashlib
import logging
from pathlib import Path
from typing import List, Union

import pandas as pd
import torch
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..exceptions import ConfigurationError, DataError
from ..models.report_models import CHECKPOINT_FORMAT_VERSION, CheckpointManifest
from .segnet import SegNet, build_segnet, use_batch_statistics

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MODEL_FILE = "model.pt"
MANIFEST_FILE = "manifest.yaml"
TRACE_FILE = "trace.csv"


class Checkpoint(BaseModel):
    """A network together with its manifest and training/adaptation trace."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: SegNet
    manifest: CheckpointManifest
    loss_trace: List[float] = Field(default_factory=list)


def build_model(manifest: CheckpointManifest) -> SegNet:
    """Fresh network matching a manifest (batch-statistics mode applied)."""
    model = build_segnet(manifest.architecture)
    if manifest.batch_statistics:
        use_batch_statistics(model)
    return model


def write_trace(trace: List[float], path: PathLike) -> None:
    """Write a `step,loss` trace file."""
    pd.DataFrame({"step": range(1, len(trace) + 1), "loss": trace}).to_csv(
        path, index=False, float_format="%.8g"
    )


def save_checkpoint(ckpt: Checkpoint, directory: PathLike) -> Path:
    """Write parameters, manifest and trace into directory."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt.model.state_dict(), root / MODEL_FILE)
    (root / MANIFEST_FILE).write_text(
        yaml.safe_dump(ckpt.manifest.model_dump(mode="json"), sort_keys=False), encoding="utf-8"
    )
    if ckpt.loss_trace:
        write_trace(ckpt.loss_trace, root / TRACE_FILE)
    logger.info(f"Saved checkpoint ({ckpt.manifest.pipeline.value}) to {root}")
    return root


def load_manifest(directory: PathLike) -> CheckpointManifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise DataError(f"Checkpoint manifest not found: {path}")
    try:
        manifest = CheckpointManifest(**(yaml.safe_load(path.read_text(encoding="utf-8")) or {}))
    except ValidationError as e:
        raise ConfigurationError(f"Invalid checkpoint manifest {path}: {e}") from e
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(
            f"Unsupported checkpoint format {manifest.format_version} (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return manifest


def load_checkpoint(directory: PathLike, device: str = "cpu") -> Checkpoint:
    """Rebuild the network of a checkpoint directory."""
    root = Path(directory)
    manifest = load_manifest(root)
    model = build_model(manifest)
    weights = root / MODEL_FILE
    if not weights.exists():
        raise DataError(f"Checkpoint parameters not found: {weights}")
    model.load_state_dict(torch.load(weights, map_location=device, weights_only=True))
    model.to(device)

    trace: List[float] = []
    if (root / TRACE_FILE).exists():
        trace = pd.read_csv(root / TRACE_FILE)["loss"].astype(float).tolist()
    return Checkpoint(model=model, manifest=manifest, loss_trace=trace)


def parameter_hash(directory: PathLike) -> str:
    """SHA-256 of a checkpoint's parameter payload."""
    return hashlib.sha256((Path(directory) / MODEL_FILE).read_bytes()).hexdigest()
