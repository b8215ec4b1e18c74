"""
Sliding-window inference over full volumes.

Patches are taken on a regular grid of origins with the configured stride;
the last origin on each axis is pinned to the far edge so every voxel is
covered. Overlapping softmax outputs are averaged with uniform weights.
"""

import itertools
import logging
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..exceptions import InvalidArgumentError
from ..models.config_models import PatchSpec
from ..models.volume_models import Volume

logger = logging.getLogger(__name__)


def window_origins(size: int, patch: int, stride: int) -> List[int]:
    """Patch start indices along one axis covering [0, size)."""
    if size < patch:
        raise InvalidArgumentError(f"Axis of length {size} is smaller than the patch ({patch})")
    origins = list(range(0, size - patch + 1, stride))
    if origins[-1] != size - patch:
        origins.append(size - patch)
    return origins


def patch_grid(spatial_shape: Sequence[int], spec: PatchSpec) -> List[Tuple[int, int, int]]:
    """All 3D patch origins of a volume."""
    axes = [window_origins(n, p, s) for n, p, s in zip(spatial_shape, spec.patch_size, spec.stride)]
    return [tuple(o) for o in itertools.product(*axes)]  # type: ignore[misc]


def model_placement(model: nn.Module) -> Tuple[torch.device, torch.dtype]:
    """Device and floating dtype of a model's parameters (cpu/float32 if it has none)."""
    for p in model.parameters():
        return p.device, p.dtype
    return torch.device("cpu"), torch.float32


@torch.no_grad()
def sliding_window_predict(
    model: nn.Module,
    v: Volume,
    spec: PatchSpec,
    batch_size: int = 1,
) -> Volume:
    """
    Full-volume class probabilities by overlapping patch inference.

    Args:
        model: Network returning (N, K, D, H, W) logits
        v: Input volume with the model's channel count
        spec: Patch size and stride
        batch_size: Patches per forward pass

    Returns:
        K-channel float32 probability volume on v's grid
    """
    data = v.as_channels()
    shape = v.spatial_shape
    if any(n < p for n, p in zip(shape, spec.patch_size)):
        raise InvalidArgumentError(f"Volume {shape} is smaller than the patch {spec.patch_size}")

    origins = patch_grid(shape, spec)
    device, dtype = model_placement(model)
    x = torch.from_numpy(np.ascontiguousarray(data)).to(device=device, dtype=dtype)

    was_training = model.training
    model.eval()
    total = None
    counts = torch.zeros((1, *shape), dtype=torch.float64, device=device)
    pz, py, px = spec.patch_size
    try:
        for start in range(0, len(origins), batch_size):
            batch_origins = origins[start : start + batch_size]
            batch = torch.stack([x[:, z : z + pz, y : y + py, w : w + px] for z, y, w in batch_origins])
            probs = torch.softmax(model(batch), dim=1).to(torch.float64)
            if total is None:
                total = torch.zeros((probs.shape[1], *shape), dtype=torch.float64, device=device)
            for (z, y, w), p in zip(batch_origins, probs):
                total[:, z : z + pz, y : y + py, w : w + px] += p
                counts[:, z : z + pz, y : y + py, w : w + px] += 1.0
    finally:
        model.train(was_training)

    assert total is not None
    out = (total / counts).cpu().numpy().astype(np.float32)
    logger.debug(f"Sliding-window inference over {len(origins)} patches of {spec.patch_size}")
    return Volume(data=out, spacing=v.spacing)


def argmax_labels(probs: Volume) -> np.ndarray:
    """Per-voxel argmax class of a probability volume."""
    return np.argmax(probs.as_channels(), axis=0).astype(np.int64)
