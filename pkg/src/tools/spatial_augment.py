"""
Invertible affine spatial augmentation with sentinel-based masking.

Transforms act on voxel index coordinates (z, y, x). A matrix M maps
input positions to output positions: warp(v)(y) = v(M^-1 y) and
inverse_warp(v)(y) = v(M y). Every resampling transports a validity
channel alongside the data; voxels whose transported validity drops below
the threshold are out-of-field and receive the sentinel value.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..exceptions import InvalidArgumentError
from ..models.config_models import SpatialConfig
from ..models.volume_models import Volume

logger = logging.getLogger(__name__)


class AffineAugmentation(BaseModel):
    """Homogeneous 4x4 voxel-coordinate transform with its masking rules."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray = Field(..., description="4x4 map from input to output voxel coordinates")
    interpolation: str = Field(default="trilinear")
    sentinel: float = Field(default=-1.0)
    validity_threshold: float = Field(default=0.999, gt=0.0, lt=1.0)

    @field_validator("matrix", mode="before")
    def validate_matrix(cls, v: np.ndarray) -> np.ndarray:
        """Require a 4x4 homogeneous matrix."""
        m = np.asarray(v, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"Affine matrix must be 4x4, got {m.shape}")
        return m

    @field_validator("interpolation")
    def validate_interpolation(cls, v: str) -> str:
        if v != "trilinear":
            raise ValueError("Only trilinear interpolation is supported")
        return v

    @field_validator("sentinel")
    def validate_sentinel(cls, v: float) -> float:
        if 0.0 <= v <= 1.0:
            raise ValueError("Sentinel must lie outside [0, 1]")
        return v

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix[:3, :3]))

    def check_invertible(self) -> None:
        if abs(self.determinant) <= 1e-8:
            raise InvalidArgumentError(f"Affine matrix is singular (det={self.determinant:.3e})")

    def inverse_matrix(self) -> np.ndarray:
        self.check_invertible()
        return np.linalg.inv(self.matrix)

    @classmethod
    def identity(cls, cfg: SpatialConfig = SpatialConfig()) -> "AffineAugmentation":
        return cls(matrix=np.eye(4), sentinel=cfg.sentinel, validity_threshold=cfg.validity_threshold)

    @classmethod
    def translation(cls, offset: Sequence[float], cfg: SpatialConfig = SpatialConfig()) -> "AffineAugmentation":
        m = np.eye(4)
        m[:3, 3] = offset
        return cls(matrix=m, sentinel=cfg.sentinel, validity_threshold=cfg.validity_threshold)


def _rotation(angles_rad: Sequence[float]) -> np.ndarray:
    a, b, c = angles_rad
    rz = np.array([[1, 0, 0], [0, math.cos(a), -math.sin(a)], [0, math.sin(a), math.cos(a)]])
    ry = np.array([[math.cos(b), 0, math.sin(b)], [0, 1, 0], [-math.sin(b), 0, math.cos(b)]])
    rx = np.array([[math.cos(c), -math.sin(c), 0], [math.sin(c), math.cos(c), 0], [0, 0, 1]])
    return rz @ ry @ rx


def sample_affine(
    cfg: SpatialConfig, rng: np.random.Generator, spatial_shape: Sequence[int]
) -> AffineAugmentation:
    """
    Draw a random rotation-scale-translation about the grid centre.

    Args:
        cfg: Rotation, scale and translation ranges
        rng: Source of randomness
        spatial_shape: Grid the transform is centred on

    Returns:
        AffineAugmentation with the config's sentinel and threshold
    """
    max_rot = math.radians(cfg.max_rotation_deg)
    angles = rng.uniform(-max_rot, max_rot, size=3)
    scales = rng.uniform(1.0 - cfg.max_scale_delta, 1.0 + cfg.max_scale_delta, size=3)
    shift = rng.uniform(-cfg.max_translation_vox, cfg.max_translation_vox, size=3)

    centre = (np.asarray(spatial_shape, dtype=np.float64) - 1.0) / 2.0
    linear = _rotation(angles) @ np.diag(scales)
    m = np.eye(4)
    m[:3, :3] = linear
    m[:3, 3] = centre + shift - linear @ centre
    return AffineAugmentation(
        matrix=m, sentinel=cfg.sentinel, validity_threshold=cfg.validity_threshold
    )


def _sampling_grid(sample_matrix: np.ndarray, shape: Sequence[int], dtype: torch.dtype) -> torch.Tensor:
    """Normalized grid_sample grid for output voxels y sampling input at A y."""
    axes = [torch.arange(n, dtype=torch.float64) for n in shape]
    zz, yy, xx = torch.meshgrid(*axes, indexing="ij")
    coords = torch.stack([zz, yy, xx, torch.ones_like(zz)], dim=-1)
    src = coords @ torch.from_numpy(sample_matrix).T
    norm = []
    for axis, n in enumerate(shape):
        norm.append(2.0 * src[..., axis] / max(n - 1, 1) - 1.0)
    # grid_sample expects (x, y, z) ordering in the last dimension
    grid = torch.stack([norm[2], norm[1], norm[0]], dim=-1)
    return grid.unsqueeze(0).to(dtype)


def affine_resample(
    x: torch.Tensor,
    validity: torch.Tensor,
    sample_matrix: np.ndarray,
    threshold: float,
    fill: float,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Differentiable trilinear resampling with validity transport.

    Args:
        x: (N, C, D, H, W) values
        validity: (N, 1, D, H, W) input validity in [0, 1]
        sample_matrix: 4x4 map from output to input voxel coordinates
        threshold: Minimum transported validity of a valid output voxel
        fill: Value written to invalid output voxels

    Returns:
        (values, valid) with valid a boolean (N, 1, D, H, W) tensor
    """
    n = x.shape[0]
    grid = _sampling_grid(sample_matrix, x.shape[2:], x.dtype).expand(n, -1, -1, -1, -1)
    weighted = F.grid_sample(x * validity, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    carried = F.grid_sample(validity, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
    valid = carried >= threshold
    values = torch.where(valid, weighted / carried.clamp_min(threshold), torch.full_like(weighted, fill))
    return values, valid


def coverage(t: AffineAugmentation, spatial_shape: Sequence[int]) -> np.ndarray:
    """
    Voxels of the warped grid that sample inside the original field of view.

    Depends only on t and the grid shape, never on intensities.

    Returns:
        Boolean (z, y, x) grid
    """
    ones = torch.ones((1, 1, *spatial_shape), dtype=torch.float64)
    with torch.no_grad():
        _, valid = affine_resample(ones, ones, t.inverse_matrix(), t.validity_threshold, t.sentinel)
    return valid[0, 0].numpy()


def _resample_volume(
    v: Volume, t: AffineAugmentation, sample_matrix: np.ndarray, validity: np.ndarray
) -> Volume:
    data = v.as_channels().astype(np.float64)
    validity = np.asarray(validity, dtype=np.float64)
    if validity.shape != v.spatial_shape:
        raise InvalidArgumentError(f"Validity grid {validity.shape} does not match volume {v.spatial_shape}")
    validity = validity[None]
    with torch.no_grad():
        values, _ = affine_resample(
            torch.from_numpy(data)[None],
            torch.from_numpy(validity)[None],
            sample_matrix,
            t.validity_threshold,
            t.sentinel,
        )
    out = values[0].numpy()
    if v.data.ndim == 3:
        out = out[0]
    return Volume(data=out.astype(v.data.dtype), spacing=v.spacing)


def warp(v: Volume, t: AffineAugmentation, validity: Optional[np.ndarray] = None) -> Volume:
    """
    Resample v through t; out-of-field voxels hold t.sentinel.

    The whole input grid is in field unless a boolean validity grid is given.
    """
    if validity is None:
        validity = np.ones(v.spatial_shape, dtype=bool)
    return _resample_volume(v, t, t.inverse_matrix(), validity)


def inverse_warp(v: Volume, t: AffineAugmentation, validity: Optional[np.ndarray] = None) -> Volume:
    """
    Map a warped volume back to the original grid.

    Without an explicit validity grid, the in-field voxels of v are the
    coverage of t, so content that left the field in warp stays invalid.
    """
    t.check_invertible()
    if validity is None:
        validity = coverage(t, v.spatial_shape)
    return _resample_volume(v, t, t.matrix, validity)


def consistency_mask(a: Volume, b: Volume, sentinel: float = -1.0) -> np.ndarray:
    """
    Voxels where neither volume holds the sentinel.

    Returns:
        Boolean (z, y, x) grid
    """
    if a.data.shape != b.data.shape:
        raise InvalidArgumentError(f"Shape mismatch: {a.data.shape} vs {b.data.shape}")
    valid_a = np.all(a.as_channels() != sentinel, axis=0)
    valid_b = np.all(b.as_channels() != sentinel, axis=0)
    return valid_a & valid_b


def renormalize_probabilities(probs: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Rescale class channels to sum to one on valid voxels."""
    total = probs.sum(dim=1, keepdim=True).clamp_min(1e-12)
    return torch.where(valid, probs / total, probs)
