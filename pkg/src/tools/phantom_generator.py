"""
Synthetic paired cross-domain phantom generator.

Each sample index gets one random label geometry made of smooth
superellipsoid blobs (one or more per foreground class, earlier classes
win overlaps). The same geometry is rendered under two intensity domains:
class base value -> transfer function -> multiplicative smooth bias
field -> additive Gaussian noise -> clipping. Every sample has its own
seeded RNG stream, so generation is deterministic and parallelizable.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from ..exceptions import GenerationError
from ..models.config_models import IntensityDomain, PhantomConfig, TransferKind
from ..models.volume_models import Dataset, LabelMap, Sample, Volume
from .volume_io import resample, resample_labels

logger = logging.getLogger(__name__)

DOMAIN_A_TAG = "A"
DOMAIN_B_TAG = "B"


def case_id(index: int) -> str:
    return f"case_{index:03d}"


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def superellipsoid_mask(
    grid_size: int,
    centre: np.ndarray,
    radii: np.ndarray,
    exponent: float,
    rotation: np.ndarray,
) -> np.ndarray:
    """Boolean mask of sum(|u_i / r_i| ** e) <= 1 in a rotated frame."""
    axes = np.arange(grid_size, dtype=np.float64)
    zz, yy, xx = np.meshgrid(axes, axes, axes, indexing="ij")
    rel = np.stack([zz - centre[0], yy - centre[1], xx - centre[2]], axis=-1)
    local = rel @ rotation
    return np.sum(np.abs(local / radii) ** exponent, axis=-1) <= 1.0


def _draw_blob(cfg: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    n = cfg.grid_size
    fraction = rng.uniform(*cfg.target_fraction_range) / cfg.shapes_per_class
    r_eq = (3.0 * fraction * n**3 / (4.0 * math.pi)) ** (1.0 / 3.0)
    aspect = np.exp(rng.uniform(-0.25, 0.25, size=3))
    aspect /= np.prod(aspect) ** (1.0 / 3.0)
    radii = r_eq * aspect
    exponent = rng.uniform(2.0, 3.5)
    rotation = _random_rotation(rng)
    margin = min(math.ceil(radii.max() * 1.2) + 1, n // 2 - 1)
    centre = rng.uniform(margin, n - 1 - margin, size=3)
    return superellipsoid_mask(n, centre, radii, exponent, rotation)


def generate_labels(cfg: PhantomConfig, index: int) -> np.ndarray:
    """Label geometry of one sample index."""
    rng = np.random.default_rng([cfg.seed, index])
    low, high = cfg.class_fraction_bounds
    total = cfg.grid_size**3
    for attempt in range(cfg.max_retries):
        labels = np.zeros((cfg.grid_size,) * 3, dtype=np.int64)
        for cls in range(1, cfg.num_classes):
            for _ in range(cfg.shapes_per_class):
                blob = _draw_blob(cfg, rng) & (labels == 0)
                labels[blob] = cls
        fractions = np.bincount(labels.ravel(), minlength=cfg.num_classes)[1:] / total
        if np.all((fractions >= low) & (fractions <= high)):
            return labels
        logger.debug(f"Sample {index} attempt {attempt}: class fractions {np.round(fractions, 4)}")
    raise GenerationError(
        f"Could not place non-overlapping classes for sample {index} "
        f"after {cfg.max_retries} attempts",
        sample_index=index,
    )


def smooth_bias_field(shape: Tuple[int, int, int], strength: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative field 1 + strength * s with smooth s in [-1, 1]."""
    if strength == 0.0:
        return np.ones(shape)
    s = ndimage.gaussian_filter(rng.normal(size=shape), sigma=max(shape) / 6.0, mode="nearest")
    peak = np.abs(s).max()
    if peak > 0:
        s = s / peak
    return 1.0 + strength * s


def apply_transfer(base: np.ndarray, domain: IntensityDomain) -> np.ndarray:
    """Class base intensities through the domain's transfer function."""
    if domain.intensity_transfer == TransferKind.IDENTITY:
        return base
    if domain.intensity_transfer == TransferKind.INVERTED:
        lo, hi = min(domain.class_intensity_map), max(domain.class_intensity_map)
        base = lo + hi - base
        if domain.gamma == 1.0:
            return base
    return np.clip(base, 0.0, None) ** domain.gamma


def render(labels: np.ndarray, domain: IntensityDomain, rng: np.random.Generator) -> np.ndarray:
    """Intensity image of a label geometry under one domain."""
    base = np.asarray(domain.class_intensity_map, dtype=np.float64)[labels]
    image = apply_transfer(base, domain) * smooth_bias_field(labels.shape, domain.bias_field_strength, rng)
    if domain.noise_sigma > 0:
        image = image + rng.normal(0.0, domain.noise_sigma, size=labels.shape)
    return np.clip(image, *domain.intensity_range).astype(np.float32)


def _generate_sample(cfg: PhantomConfig, index: int) -> Tuple[Sample, Sample]:
    labels = generate_labels(cfg, index)
    spacing = (cfg.spacing_mm,) * 3
    label_map = LabelMap(labels=labels, num_classes=cfg.num_classes, spacing=spacing)

    image_a = render(labels, cfg.domain_a, np.random.default_rng([cfg.seed, index, 1]))
    image_b = render(labels, cfg.domain_b, np.random.default_rng([cfg.seed, index, 2]))
    vol_a = Volume(data=image_a, spacing=spacing)
    vol_b = Volume(data=image_b, spacing=spacing)
    label_b = label_map
    if cfg.resolution_gap:
        coarse = (cfg.spacing_mm * 2.0,) * 3
        vol_b = resample(vol_b, coarse)
        label_b = resample_labels(label_map, coarse)

    cid = case_id(index)
    return (
        Sample(case_id=cid, image=vol_a, label=label_map),
        Sample(case_id=cid, image=vol_b, label=label_b),
    )


def generate(cfg: PhantomConfig, workers: int = 1) -> Tuple[Dataset, Dataset]:
    """
    Generate the paired benchmark.

    Args:
        cfg: Grid, classes, domains and seed
        workers: Threads rendering samples in parallel

    Returns:
        (domain A dataset, domain B dataset); sample i shares its label
        geometry across both
    """
    logger.info(f"Generating {cfg.num_samples} phantom samples on a {cfg.grid_size}^3 grid")
    indices = list(range(cfg.num_samples))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs: List[Tuple[Sample, Sample]] = list(pool.map(lambda i: _generate_sample(cfg, i), indices))
    else:
        pairs = [_generate_sample(cfg, i) for i in indices]
    domain_a = Dataset(samples=[p[0] for p in pairs], domain_tag=DOMAIN_A_TAG)
    domain_b = Dataset(samples=[p[1] for p in pairs], domain_tag=DOMAIN_B_TAG)
    return domain_a, domain_b


def benchmark_split(
    domain_a: Dataset, domain_b: Dataset, num_train: int
) -> Tuple[Dataset, Dataset, Dataset]:
    """(source training set, in-domain test set, cross-domain test set)."""
    return domain_a.subset(0, num_train), domain_a.subset(num_train), domain_b.subset(num_train)
