"""
Segmentation quality metrics.

Dice overlap and the 95th percentile Hausdorff distance (HD95). HD95 pools
the directed nearest-surface distances of both directions and takes one
linearly interpolated 95th percentile. Surface voxels are mask voxels with
at least one 6-neighbour outside the mask (outside the grid counts as
outside).
"""

import logging
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..exceptions import InvalidArgumentError
from ..models.report_models import SurfaceDistance
from ..models.volume_models import LabelMap

logger = logging.getLogger(__name__)

SIX_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)

HD95Variant = Literal["pooled", "max_directed"]


def _check_geometry(pred: LabelMap, ref: LabelMap) -> None:
    if pred.spatial_shape != ref.spatial_shape:
        raise InvalidArgumentError(
            f"Geometry mismatch: prediction {pred.spatial_shape} vs reference {ref.spatial_shape}"
        )


def dice_from_masks(p: np.ndarray, r: np.ndarray) -> float:
    """2|P n R| / (|P| + |R|), 1.0 when both are empty."""
    total = int(p.sum()) + int(r.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, r).sum()) / total


def dice_score(pred: LabelMap, ref: LabelMap, class_id: int) -> float:
    """Dice overlap of one class."""
    _check_geometry(pred, ref)
    return dice_from_masks(pred.mask(class_id), ref.mask(class_id))


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with a 6-neighbour outside the mask."""
    mask = mask.astype(bool)
    eroded = ndimage.binary_erosion(mask, structure=SIX_CONNECTIVITY, border_value=0)
    return mask & ~eroded


def _directed_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cKDTree(b).query(a, k=1)[0]


def hd95_from_masks(
    p: np.ndarray,
    r: np.ndarray,
    spacing: Sequence[float],
    variant: HD95Variant = "pooled",
) -> SurfaceDistance:
    """HD95 between two boolean masks in mm."""
    p_empty, r_empty = not p.any(), not r.any()
    if p_empty and r_empty:
        return SurfaceDistance(value=None, reason="class absent from prediction and reference")
    if p_empty:
        return SurfaceDistance(value=None, reason="class absent from prediction")
    if r_empty:
        return SurfaceDistance(value=None, reason="class absent from reference")

    scale = np.asarray(spacing, dtype=np.float64)
    sp = np.argwhere(surface_voxels(p)) * scale
    sr = np.argwhere(surface_voxels(r)) * scale
    d_pr = _directed_distances(sp, sr)
    d_rp = _directed_distances(sr, sp)
    if variant == "pooled":
        value = float(np.percentile(np.concatenate([d_pr, d_rp]), 95, method="linear"))
    else:
        value = float(max(np.percentile(d_pr, 95, method="linear"), np.percentile(d_rp, 95, method="linear")))
    return SurfaceDistance(value=value)


def hd95(
    pred: LabelMap,
    ref: LabelMap,
    class_id: int,
    spacing: Optional[Sequence[float]] = None,
    variant: HD95Variant = "pooled",
) -> SurfaceDistance:
    """
    95th percentile surface distance of one class.

    Args:
        pred: Predicted labels
        ref: Reference labels
        class_id: Class to evaluate
        spacing: Voxel size in mm (defaults to the reference spacing)
        variant: "pooled" percentile or max of directed percentiles

    Returns:
        SurfaceDistance with a value, or None and a reason when a set is empty
    """
    _check_geometry(pred, ref)
    return hd95_from_masks(pred.mask(class_id), ref.mask(class_id), spacing or ref.spacing, variant)
