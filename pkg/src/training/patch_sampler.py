"""
Random patch origins with optional foreground oversampling.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from ..exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

Origin = Tuple[int, int, int]


def _check_fits(shape: Sequence[int], patch: Sequence[int]) -> None:
    if any(n < p for n, p in zip(shape, patch)):
        raise InvalidArgumentError(f"Volume {tuple(shape)} is smaller than the patch {tuple(patch)}")


def uniform_origin(shape: Sequence[int], patch: Sequence[int], rng: np.random.Generator) -> Origin:
    """Origin drawn uniformly over all valid patch positions."""
    _check_fits(shape, patch)
    z, y, x = (int(rng.integers(0, n - p + 1)) for n, p in zip(shape, patch))
    return (z, y, x)


def centred_origin(
    centre: Sequence[int], shape: Sequence[int], patch: Sequence[int]
) -> Origin:
    """Origin of the patch centred on a voxel, shifted to stay inside the grid."""
    z, y, x = (
        int(np.clip(c - p // 2, 0, n - p)) for c, n, p in zip(centre, shape, patch)
    )
    return (z, y, x)


def sample_origin(
    shape: Sequence[int],
    patch: Sequence[int],
    rng: np.random.Generator,
    foreground: Optional[np.ndarray] = None,
    foreground_probability: float = 0.0,
) -> Origin:
    """
    Draw one patch origin.

    With probability foreground_probability (and a non-empty foreground
    mask) the patch is centred on a random foreground voxel, otherwise the
    origin is uniform.
    """
    _check_fits(shape, patch)
    if foreground is not None and foreground_probability > 0 and rng.random() < foreground_probability:
        voxels = np.argwhere(foreground)
        if len(voxels):
            centre = voxels[int(rng.integers(0, len(voxels)))]
            return centred_origin(centre, shape, patch)
    return uniform_origin(shape, patch, rng)


def crop(data: np.ndarray, origin: Origin, patch: Sequence[int]) -> np.ndarray:
    """Patch of a (z, y, x) or (c, z, y, x) array."""
    z, y, x = origin
    pz, py, px = patch
    return data[..., z : z + pz, y : y + py, x : x + px]
