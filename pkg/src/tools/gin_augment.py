"""
Global intensity non-linear (GIN) augmentation.

A shallow convolutional network g with freshly sampled random weights
remaps intensities; its output is blended with the input:
    GIN(x) = alpha * g(x) + (1 - alpha) * x
Weights follow a fan-in scaled Gaussian and are drawn from the caller's
numpy Generator, so identical generator states give identical outputs.
"""

import logging
import math
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..models.config_models import GinConfig
from ..models.volume_models import Volume

logger = logging.getLogger(__name__)


class RandomIntensityNetwork:
    """One sampled realization of the shallow random network g."""

    def __init__(self, weights: List[torch.Tensor], negative_slope: float):
        self.weights = weights
        self.negative_slope = negative_slope

    @classmethod
    def sample(cls, cfg: GinConfig, channels: int, rng: np.random.Generator) -> "RandomIntensityNetwork":
        """Draw fresh weights for a network mapping `channels` to `channels`."""
        k = cfg.kernel_size
        gain = math.sqrt(2.0 / (1.0 + cfg.negative_slope**2))
        weights = []
        for layer in range(cfg.num_layers):
            c_in = channels if layer == 0 else cfg.hidden_channels
            c_out = channels if layer == cfg.num_layers - 1 else cfg.hidden_channels
            std = gain / math.sqrt(c_in * k**3)
            w = rng.normal(0.0, std, size=(c_out, c_in, k, k, k))
            weights.append(torch.from_numpy(w.astype(np.float32)))
        return cls(weights, cfg.negative_slope)

    @torch.no_grad()
    def apply(self, data: np.ndarray) -> np.ndarray:
        """Run g on a (z, y, x) or (c, z, y, x) array."""
        squeeze = data.ndim == 3
        x = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))
        x = x[None, None] if squeeze else x[None]
        for i, w in enumerate(self.weights):
            p = w.shape[-1] // 2
            if p:
                x = F.pad(x, (p, p, p, p, p, p), mode="replicate")
            x = F.conv3d(x, w)
            if i < len(self.weights) - 1:
                x = F.leaky_relu(x, self.negative_slope)
        out = x[0, 0] if squeeze else x[0]
        return out.numpy().astype(np.float64)


def _match_moments(g: np.ndarray, reference: np.ndarray) -> np.ndarray:
    g_std = g.std()
    centred = g - g.mean()
    if g_std > 0:
        centred = centred / g_std
    return centred * reference.std() + reference.mean()


def gin_augment(
    v: Volume,
    cfg: GinConfig,
    rng: np.random.Generator,
    alpha: Optional[float] = None,
) -> Volume:
    """
    Apply GIN augmentation with a freshly sampled network.

    Args:
        v: Finite input volume
        cfg: Network shape and alpha law
        rng: Generator the network weights (and alpha) are drawn from
        alpha: Force the blend weight instead of drawing it

    Returns:
        Augmented volume with the input's shape, spacing and dtype
    """
    x = v.data.astype(np.float64)
    network = RandomIntensityNetwork.sample(cfg, v.channels, rng)
    if alpha is None:
        alpha = float(rng.uniform(*cfg.alpha_distribution))
    g = network.apply(x)
    if cfg.renormalize_output:
        g = _match_moments(g, x)
    out = alpha * g + (1.0 - alpha) * x
    if not np.all(np.isfinite(out)):
        logger.warning("GIN produced non-finite values; falling back to the input")
        out = x
    return Volume(data=out.astype(v.data.dtype), spacing=v.spacing)
