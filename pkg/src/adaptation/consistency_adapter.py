"""
Augmentation-consistency adapter.

Each patch is seen through two random affine views A and B. Both
predictions are mapped back to the patch grid; voxels that left the field
of view in either view are masked out, and the masked soft-Dice
disagreement of the two back-warped predictions is minimized.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import torch

from ..networks.segnet import SegNet
from ..networks.sliding_window import model_placement
from ..tools.spatial_augment import (
    AffineAugmentation,
    affine_resample,
    renormalize_probabilities,
    sample_affine,
)
from ..training.losses import consistency_dice_loss, subset_softmax
from ..training.patch_sampler import Origin, crop
from .base_adapter import BaseAdapter, TargetPatches

logger = logging.getLogger(__name__)


class ConsistencyAdapter(BaseAdapter):
    """Consistency-Dice test-time adaptation."""

    name = "consistency"

    def branch_input(
        self, model: SegNet, target: TargetPatches, origin: Origin, rng: np.random.Generator
    ) -> torch.Tensor:
        """Network input of one branch, GIN-augmented on the whole volume when enabled."""
        if not self.cfg.intensity_augmentation:
            return self.network_patch(model, target, origin)
        augmented = self.pipeline.augmented(target.normalized, rng)
        data = crop(augmented.as_channels(), origin, self.patch.patch_size)
        x = torch.from_numpy(np.ascontiguousarray(data))[None]
        device, dtype = model_placement(model)
        return x.to(device=device, dtype=dtype)

    def branch_prediction(
        self, model: SegNet, x: torch.Tensor, t: AffineAugmentation
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Prediction of one augmented view mapped back to the patch grid.

        Only logits of the adapted classes receive gradient.

        Returns:
            (probabilities, valid) with valid a boolean (1, 1, D, H, W) tensor
        """
        threshold = t.validity_threshold
        ones = torch.ones_like(x[:, :1])
        with torch.no_grad():
            warped, warped_valid = affine_resample(x, ones, t.inverse_matrix(), threshold, fill=0.0)
        probs = subset_softmax(model(warped), self.classes)
        back, valid = affine_resample(
            probs, warped_valid.to(probs.dtype), t.matrix, threshold, fill=t.sentinel
        )
        return renormalize_probabilities(back, valid), valid

    def patch_loss(
        self,
        model: SegNet,
        target: TargetPatches,
        origin: Origin,
        rng: np.random.Generator,
    ) -> Optional[torch.Tensor]:
        spatial = self.cfg.spatial
        t_a = sample_affine(spatial, rng, self.patch.patch_size)
        t_b = sample_affine(spatial, rng, self.patch.patch_size)
        y_a, valid_a = self.branch_prediction(model, self.branch_input(model, target, origin, rng), t_a)
        y_b, valid_b = self.branch_prediction(model, self.branch_input(model, target, origin, rng), t_b)
        mask = valid_a & valid_b
        if not bool(mask.any()):
            return None
        return consistency_dice_loss(
            y_a, y_b, mask, d=self.cfg.loss_exponent, eps=self.cfg.stability_eps, classes=self.classes
        )
