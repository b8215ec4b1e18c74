"""
Entropy-minimization baseline (Tent).

Only the affine parameters of normalization layers are updated; batch-norm
layers normalize with current-input statistics.
"""

import logging
from typing import Optional

import numpy as np
import torch

from ..exceptions import ConfigurationError
from ..models.config_models import AdaptationConfig, ParamGroup, PatchSpec
from ..models.volume_models import Volume
from ..networks.checkpoint import Checkpoint
from ..networks.segnet import SegNet, parameter_subset
from ..training.losses import entropy_loss
from ..training.patch_sampler import Origin
from .base_adapter import AdaptationResult, BaseAdapter, TargetPatches

logger = logging.getLogger(__name__)

TENT_LEARNING_RATE = 1e-3


class TentAdapter(BaseAdapter):
    """Mean prediction entropy minimized over normalization parameters."""

    name = "tent"

    def __init__(self, checkpoint: Checkpoint, cfg: AdaptationConfig, patch: PatchSpec = PatchSpec()):
        super().__init__(checkpoint, cfg, patch)
        if not parameter_subset(checkpoint.model, ParamGroup.NORM):
            raise ConfigurationError("Tent needs a model with affine normalization parameters")

    @property
    def parameter_group(self) -> ParamGroup:
        return ParamGroup.NORM

    def patch_loss(
        self,
        model: SegNet,
        target: TargetPatches,
        origin: Origin,
        rng: np.random.Generator,
    ) -> Optional[torch.Tensor]:
        return entropy_loss(model.probabilities(self.network_patch(model, target, origin)))


def tent_adapt(
    checkpoint: Checkpoint,
    target: Volume,
    steps: int = 12,
    lr: float = TENT_LEARNING_RATE,
    patch: PatchSpec = PatchSpec(),
    patches_per_step: int = 1,
    seed: int = 0,
) -> AdaptationResult:
    """Run Tent on one target volume without weight decay."""
    cfg = AdaptationConfig(
        learning_rate=lr,
        weight_decay=0.0,
        num_steps=steps,
        patches_per_step=patches_per_step,
        param_group=ParamGroup.NORM,
        seed=seed,
    )
    return TentAdapter(checkpoint, cfg, patch).adapt(target)
