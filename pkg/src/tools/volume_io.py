"""
Volume resampling and file IO.

Resampling maps voxel centres at physical position (i + 0.5) * spacing
between grids; samples outside the source grid are edge-clamped.
Two file formats are supported:
- raw: `<name>.bin` little-endian float32 in (c, z, y, x) order plus a
  `<name>.meta` YAML sidecar with shape, spacing_mm, channels, dtype
- NIfTI-1 (`.nii` / `.nii.gz`) through nibabel
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import nibabel as nib
import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError
from scipy import ndimage

from ..exceptions import InvalidArgumentError, VolumeFormatError
from ..models.volume_models import LabelMap, Spacing, Volume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RAW_DTYPE = "<f4"


def _check_spacing(target_spacing: Sequence[float]) -> Spacing:
    if len(target_spacing) != 3 or any(not s > 0 for s in target_spacing):
        raise InvalidArgumentError(
            f"Target spacing must have 3 strictly positive entries, got {tuple(target_spacing)}"
        )
    return (float(target_spacing[0]), float(target_spacing[1]), float(target_spacing[2]))


def resampled_shape(
    shape: Sequence[int], spacing: Sequence[float], target_spacing: Sequence[float]
) -> Tuple[int, int, int]:
    """Spatial shape after resampling, rounded half up."""
    out = [max(1, int(math.floor(n * s / t + 0.5))) for n, s, t in zip(shape, spacing, target_spacing)]
    return (out[0], out[1], out[2])


def _sample_coordinates(
    shape: Sequence[int], spacing: Sequence[float], target_spacing: Sequence[float]
) -> np.ndarray:
    new_shape = resampled_shape(shape, spacing, target_spacing)
    axes = [
        (np.arange(n_out, dtype=np.float64) + 0.5) * (t / s) - 0.5
        for n_out, s, t in zip(new_shape, spacing, target_spacing)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def resample(v: Volume, target_spacing: Sequence[float]) -> Volume:
    """
    Resample intensities to a new voxel spacing with trilinear interpolation.

    Args:
        v: Source volume (any channel count)
        target_spacing: Output voxel size per axis in mm

    Returns:
        Volume at target_spacing, shape scaled by the spacing ratio
    """
    target = _check_spacing(target_spacing)
    coords = _sample_coordinates(v.spatial_shape, v.spacing, target)
    channels = [
        ndimage.map_coordinates(c.astype(np.float64), coords, order=1, mode="nearest")
        for c in v.as_channels()
    ]
    out = np.stack(channels).astype(v.data.dtype)
    if v.data.ndim == 3:
        out = out[0]
    logger.debug(f"Resampled {v.spatial_shape} @ {v.spacing} -> {out.shape[-3:]} @ {target}")
    return Volume(data=out, spacing=target)


def resample_labels(label_map: LabelMap, target_spacing: Sequence[float]) -> LabelMap:
    """Nearest-neighbour companion of resample for label maps."""
    target = _check_spacing(target_spacing)
    coords = _sample_coordinates(label_map.spatial_shape, label_map.spacing, target)
    out = ndimage.map_coordinates(label_map.labels, coords, order=0, mode="nearest")
    return LabelMap(labels=out.astype(label_map.labels.dtype), num_classes=label_map.num_classes, spacing=target)


class RawHeader(BaseModel):
    """Sidecar header of the raw volume format."""

    shape: List[int] = Field(..., min_length=3, max_length=4)
    spacing_mm: List[float] = Field(..., min_length=3, max_length=3)
    channels: int = Field(..., ge=1)
    dtype: str = Field(...)
    num_classes: Optional[int] = Field(None, ge=1)


def _raw_paths(path: PathLike) -> Tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".bin", ".meta"):
        p = p.with_suffix("")
    return p.with_suffix(".bin"), p.with_suffix(".meta")


def _is_nifti(path: PathLike) -> bool:
    name = str(path)
    return name.endswith(".nii") or name.endswith(".nii.gz")


def _write_raw(data: np.ndarray, spacing: Spacing, path: PathLike, num_classes: Optional[int] = None) -> None:
    bin_path, meta_path = _raw_paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(data, dtype=RAW_DTYPE)
    bin_path.write_bytes(payload.tobytes(order="C"))
    header = {
        "shape": [int(n) for n in data.shape],
        "spacing_mm": [float(s) for s in spacing],
        "channels": 1 if data.ndim == 3 else int(data.shape[0]),
        "dtype": "float32",
    }
    if num_classes is not None:
        header["num_classes"] = int(num_classes)
    meta_path.write_text(yaml.safe_dump(header, sort_keys=True), encoding="utf-8")


def _read_raw(path: PathLike) -> Tuple[np.ndarray, RawHeader]:
    bin_path, meta_path = _raw_paths(path)
    if not meta_path.exists():
        raise VolumeFormatError(f"Missing sidecar {meta_path}", field="meta")
    try:
        raw = yaml.safe_load(meta_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise VolumeFormatError(f"Unparseable sidecar {meta_path}: {e}", field="meta") from e
    if not isinstance(raw, dict):
        raise VolumeFormatError(f"Sidecar {meta_path} is not a key-value mapping", field="meta")
    try:
        header = RawHeader(**raw)
    except ValidationError as e:
        field = str(e.errors()[0]["loc"][0]) if e.errors() else "header"
        raise VolumeFormatError(f"Malformed field '{field}' in {meta_path}: {e}", field=field) from e
    if header.dtype != "float32":
        raise VolumeFormatError(f"Unsupported dtype '{header.dtype}' in {meta_path}", field="dtype")
    expected_channels = 1 if len(header.shape) == 3 else header.shape[0]
    if header.channels != expected_channels:
        raise VolumeFormatError(
            f"channels={header.channels} disagrees with shape {header.shape}", field="channels"
        )
    payload = bin_path.read_bytes()
    count = int(np.prod(header.shape))
    if len(payload) != 4 * count:
        raise VolumeFormatError(
            f"{bin_path} holds {len(payload)} bytes, shape {header.shape} needs {4 * count}",
            field="shape",
        )
    data = np.frombuffer(payload, dtype=RAW_DTYPE).reshape(header.shape).astype(np.float32)
    return data, header


def _nifti_to_canonical(arr: np.ndarray) -> np.ndarray:
    return arr.transpose(2, 1, 0) if arr.ndim == 3 else arr.transpose(3, 2, 1, 0)


def save_volume(v: Volume, path: PathLike) -> None:
    """Write a volume as raw format or NIfTI, chosen by file suffix."""
    if _is_nifti(path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        data = _nifti_to_canonical(v.data.astype(np.float32))
        affine = np.diag([v.spacing[2], v.spacing[1], v.spacing[0], 1.0])
        img = nib.Nifti1Image(data, affine)
        img.header.set_zooms(tuple([v.spacing[2], v.spacing[1], v.spacing[0]] + [1.0] * (data.ndim - 3)))
        nib.save(img, str(path))
    else:
        _write_raw(v.data, v.spacing, path)
    logger.debug(f"Saved volume {v.data.shape} to {path}")


def load_volume(path: PathLike) -> Volume:
    """Read a volume written by save_volume or any NIfTI-1 tool."""
    if _is_nifti(path):
        try:
            img = nib.load(str(path))
        except Exception as e:
            raise VolumeFormatError(f"Unreadable NIfTI {path}: {e}", field="header") from e
        arr = np.asanyarray(img.dataobj).astype(np.float32)
        if arr.ndim not in (3, 4):
            raise VolumeFormatError(f"NIfTI {path} has {arr.ndim} dimensions", field="dim")
        zooms = img.header.get_zooms()[:3]
        return Volume(data=_nifti_to_canonical(arr), spacing=(zooms[2], zooms[1], zooms[0]))
    data, header = _read_raw(path)
    return Volume(data=data, spacing=tuple(header.spacing_mm))


def save_label_map(label_map: LabelMap, path: PathLike) -> None:
    """Write labels in the raw float32 format with a num_classes key."""
    if _is_nifti(path):
        save_volume(Volume(data=label_map.labels.astype(np.float32), spacing=label_map.spacing), path)
        return
    _write_raw(label_map.labels.astype(np.float32), label_map.spacing, path, num_classes=label_map.num_classes)


def load_label_map(path: PathLike, num_classes: Optional[int] = None) -> LabelMap:
    """Read labels; num_classes comes from the sidecar unless given."""
    if _is_nifti(path):
        v = load_volume(path)
        labels = np.rint(v.data).astype(np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        return LabelMap(labels=labels, num_classes=num_classes, spacing=v.spacing)
    data, header = _read_raw(path)
    k = num_classes if num_classes is not None else header.num_classes
    if k is None:
        raise VolumeFormatError(f"Label sidecar for {path} lacks num_classes", field="num_classes")
    return LabelMap(labels=np.rint(data).astype(np.int64), num_classes=k, spacing=tuple(header.spacing_mm))
