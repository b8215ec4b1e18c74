"""
Self-similarity context (SSC) descriptor.

Maps a single-channel volume to 12 channels. Each channel compares two
patches centred on diagonally adjacent members of the 6-neighbourhood
around a voxel: value = exp(-SSD / sigma2), with sigma2 the mean of the
12 patch distances at that voxel clamped relative to its image-wide mean.
Patch reads outside the grid are edge-clamped, so the output keeps the
input's spatial shape.
"""

import itertools
import logging
from typing import List, Tuple

import numpy as np

from ..exceptions import InvalidArgumentError
from ..models.config_models import SscConfig
from ..models.volume_models import Volume

logger = logging.getLogger(__name__)

Offset = Tuple[int, int, int]

NUM_SSC_CHANNELS = 12


def six_neighborhood(distance: int = 1) -> List[Offset]:
    """Axis-aligned offsets at the given distance, lexicographically sorted."""
    offsets = []
    for axis in range(3):
        for sign in (-1, 1):
            o = [0, 0, 0]
            o[axis] = sign * distance
            offsets.append((o[0], o[1], o[2]))
    return sorted(offsets)


def diagonal_pair_table(distance: int = 1) -> List[Tuple[Offset, Offset]]:
    """
    The 12 ordered offset pairs compared by the descriptor.

    Pairs join 6-neighbourhood members whose squared distance is
    2 * distance**2 (orthogonal neighbours, antipodal pairs excluded).
    Each pair is stored with o_i < o_j and the table is sorted, which
    freezes the channel order.
    """
    table = []
    for a, b in itertools.combinations(six_neighborhood(distance), 2):
        sq = sum((x - y) ** 2 for x, y in zip(a, b))
        if sq == 2 * distance**2:
            table.append((min(a, b), max(a, b)))
    table.sort()
    return table


def _patch_offsets(patch_size: int) -> List[Offset]:
    lo = -(patch_size // 2)
    rng = range(lo, lo + patch_size)
    return list(itertools.product(rng, rng, rng))


def patch_ssd(image: np.ndarray, cfg: SscConfig) -> np.ndarray:
    """Sum of squared patch differences for every pair, shape (12, z, y, x)."""
    pairs = diagonal_pair_table(cfg.patch_distance)
    box = _patch_offsets(cfg.patch_size)
    pad = cfg.patch_distance + cfg.patch_size
    padded = np.pad(image.astype(np.float64), pad, mode="edge")
    shape = image.shape

    def shifted(off: Offset) -> np.ndarray:
        return padded[
            pad + off[0] : pad + off[0] + shape[0],
            pad + off[1] : pad + off[1] + shape[1],
            pad + off[2] : pad + off[2] + shape[2],
        ]

    ssd = np.zeros((len(pairs),) + shape, dtype=np.float64)
    for k, (oi, oj) in enumerate(pairs):
        for q in box:
            a = shifted((oi[0] + q[0], oi[1] + q[1], oi[2] + q[2]))
            b = shifted((oj[0] + q[0], oj[1] + q[1], oj[2] + q[2]))
            ssd[k] += (a - b) ** 2
    return ssd


def z_normalize(data: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance intensities (constant images map to zero)."""
    data = data.astype(np.float64)
    std = data.std()
    centred = data - data.mean()
    return centred / std if std > 0 else centred


def ssc_array(image: np.ndarray, cfg: SscConfig) -> np.ndarray:
    """Descriptor of a (z, y, x) array as float64 (12, z, y, x)."""
    if cfg.normalize_input:
        image = z_normalize(image)
    ssd = patch_ssd(image, cfg)
    variance = ssd.mean(axis=0)
    m = variance.mean()
    low, high = cfg.variance_clamp
    variance = np.clip(variance, low * m, high * m) + cfg.stability_eps
    out = np.exp(-ssd / variance[None])
    # keeps the descriptor strictly positive after float32 casting
    return np.maximum(out, np.finfo(np.float32).tiny)


def ssc_descriptor(v: Volume, cfg: SscConfig = SscConfig()) -> Volume:
    """
    Compute the 12-channel SSC descriptor of a single-channel volume.

    Args:
        v: Single-channel finite volume
        cfg: Patch size, distance and variance clamping

    Returns:
        12-channel float32 volume with the input's spatial shape and spacing
    """
    if v.channels != 1:
        raise InvalidArgumentError(f"SSC expects a single-channel volume, got {v.channels} channels")
    image = v.data if v.data.ndim == 3 else v.data[0]
    out = ssc_array(image, cfg).astype(np.float32)
    logger.debug(f"SSC descriptor computed for {image.shape}")
    return Volume(data=out, spacing=v.spacing)
