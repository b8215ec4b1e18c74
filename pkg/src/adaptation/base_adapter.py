"""
Base adapter class with the shared test-time adaptation loop.

Contains the functionality common to every adapter: copying the source
model, selecting the trainable parameter group, sampling target patches
with foreground oversampling, gradient accumulation over patches, and the
optimizer loop. Subclasses only define the per-patch loss.
"""

import copy
import logging
import math
import time
from abc import ABC, abstractmethod
from typing import List, Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field

from ..exceptions import ConfigurationError, DegenerateInputError, NumericalFailureError
from ..models.config_models import AdaptationConfig, NormKind, ParamGroup, PatchSpec
from ..models.volume_models import Volume
from ..networks.checkpoint import Checkpoint
from ..networks.segnet import SegNet, parameter_subset, use_batch_statistics
from ..networks.sliding_window import argmax_labels, model_placement, sliding_window_predict
from ..training.input_pipeline import InputPipeline
from ..training.patch_sampler import Origin, crop, sample_origin

logger = logging.getLogger(__name__)


class AdaptationResult(BaseModel):
    """Adapted model with its per-step loss trace."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: SegNet
    loss_trace: List[float] = Field(default_factory=list)
    batch_statistics: bool = False
    seed: int = 0

    def to_checkpoint(self, source: Checkpoint, cfg: AdaptationConfig) -> Checkpoint:
        """Checkpoint of the adapted parameters, manifest extended by the adaptation config."""
        manifest = source.manifest.model_copy(
            update={
                "adaptation": cfg.model_copy(update={"seed": self.seed}).model_dump(mode="json"),
                "batch_statistics": self.batch_statistics or source.manifest.batch_statistics,
                "seeds": {**source.manifest.seeds, "adaptation": self.seed},
            }
        )
        return Checkpoint(model=self.model, manifest=manifest, loss_trace=self.loss_trace)


class TargetPatches:
    """Target-side tensors shared by every patch of one adaptation run."""

    def __init__(self, network_input: Volume, normalized: Volume, foreground: np.ndarray):
        self.network_input = network_input.as_channels()
        self.normalized = normalized
        self.foreground = foreground
        self.spatial_shape = network_input.spatial_shape


class BaseAdapter(ABC):
    """
    Source-free adaptation of one checkpoint to one target volume.

    Provides common functionality including:
    - Model copying and batch-statistics mode for batch-norm networks
    - Parameter group selection and AdamW without schedule
    - Foreground-oversampled patch sampling from the model's own prediction
    - Gradient accumulation normalized by the patch count
    """

    name = "base"

    def __init__(self, checkpoint: Checkpoint, cfg: AdaptationConfig, patch: PatchSpec = PatchSpec()):
        """
        Initialize the adapter.

        Args:
            checkpoint: Pre-trained model and manifest (left untouched)
            cfg: Adaptation hyperparameters
            patch: Patch geometry of the adaptation forward passes
        """
        self.checkpoint = checkpoint
        self.cfg = cfg
        self.patch = patch
        self.pipeline = InputPipeline.from_manifest(checkpoint.manifest)
        try:
            self.classes = cfg.resolve_classes(checkpoint.manifest.num_classes)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        logger.debug(f"Initialized {self.name} adapter (group={self.parameter_group.value})")

    @property
    def parameter_group(self) -> ParamGroup:
        return self.cfg.param_group

    @abstractmethod
    def patch_loss(
        self,
        model: SegNet,
        target: TargetPatches,
        origin: Origin,
        rng: np.random.Generator,
    ) -> Optional[torch.Tensor]:
        """
        Loss of one patch, or None when the patch holds nothing to supervise.

        Args:
            model: Model being adapted
            target: Prepared target tensors
            origin: Patch origin on the target grid
            rng: Adaptation RNG stream

        Returns:
            Scalar tensor with a graph to the adapted parameters
        """

    def _prepare_model(self) -> tuple:
        model = copy.deepcopy(self.checkpoint.model)
        switched = False
        if self.checkpoint.manifest.architecture.norm_kind == NormKind.BATCH:
            switched = use_batch_statistics(model) > 0
        params = parameter_subset(model, self.parameter_group)
        if not params:
            raise ConfigurationError(f"Parameter group '{self.parameter_group.value}' is empty")
        selected = {id(p) for p in params}
        for p in model.parameters():
            p.requires_grad_(id(p) in selected)
        return model, params, switched

    def prepare_target(self, target: Volume) -> TargetPatches:
        """Network input, normalized intensities and the unadapted foreground proxy."""
        network_input = self.pipeline.for_inference(target)
        probs = sliding_window_predict(self.checkpoint.model, network_input, self.patch)
        foreground = argmax_labels(probs) > 0
        return TargetPatches(network_input, self.pipeline.normalize(target), foreground)

    def network_patch(self, model: SegNet, target: TargetPatches, origin: Origin) -> torch.Tensor:
        """(1, C, D, H, W) network input tensor of a patch."""
        device, dtype = model_placement(model)
        data = np.ascontiguousarray(crop(target.network_input, origin, self.patch.patch_size))
        return torch.from_numpy(data)[None].to(device=device, dtype=dtype)

    def adapt(self, target: Volume, prepared: Optional[TargetPatches] = None) -> AdaptationResult:
        """
        Run N_s optimizer steps, each accumulating N_p patch gradients.

        Args:
            target: Raw target volume (the only data the adapter sees)
            prepared: Reuse already prepared target tensors

        Returns:
            AdaptationResult with one trace entry per step
        """
        cfg = self.cfg
        if cfg.num_steps == 0:
            logger.info(f"{self.name}: zero steps, returning the source model")
            return AdaptationResult(model=copy.deepcopy(self.checkpoint.model), seed=cfg.seed)

        model, params, switched = self._prepare_model()
        prepared = prepared or self.prepare_target(target)
        optimizer = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
        rng = np.random.default_rng(cfg.seed)
        model.train()

        trace: List[float] = []
        logger.info(
            f"{self.name}: {cfg.num_steps} steps x {cfg.patches_per_step} patches, "
            f"group={self.parameter_group.value}, classes={self.classes}, seed={cfg.seed}"
        )
        for step in range(1, cfg.num_steps + 1):
            started = time.perf_counter()
            optimizer.zero_grad(set_to_none=True)
            losses: List[float] = []
            for _ in range(cfg.patches_per_step):
                origin = sample_origin(
                    prepared.spatial_shape,
                    self.patch.patch_size,
                    rng,
                    foreground=prepared.foreground,
                    foreground_probability=cfg.foreground_ratio,
                )
                loss = self.patch_loss(model, prepared, origin, rng)
                if loss is None:
                    logger.debug(f"Step {step}: skipped degenerate patch at {origin}")
                    continue
                if not torch.isfinite(loss):
                    raise NumericalFailureError(f"{self.name} loss became {loss.item()} at step {step}")
                (loss / cfg.patches_per_step).backward()
                losses.append(float(loss.item()))
            if not losses:
                raise DegenerateInputError(
                    f"Every patch of step {step} had an empty consistency region", step=step
                )
            optimizer.step()
            step_loss = float(np.mean(losses))
            if not math.isfinite(step_loss):
                raise NumericalFailureError(f"Step {step} loss is {step_loss}")
            trace.append(step_loss)
            logger.info(
                f"{self.name} step {step}/{cfg.num_steps}: loss={step_loss:.5f} "
                f"({len(losses)} patches, {time.perf_counter() - started:.1f}s)"
            )

        for p in model.parameters():
            p.requires_grad_(True)
        model.eval()
        return AdaptationResult(model=model, loss_trace=trace, batch_statistics=switched, seed=cfg.seed)
