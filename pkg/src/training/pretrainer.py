"""
Source-domain supervised pre-training.

Every epoch visits the training volumes in a seeded random order. Each
visit runs the input pipeline on the whole volume (a fresh GIN network per
visit when the pipeline uses GIN) and draws `patches_per_volume` patches,
one third of them centred on a labeled foreground voxel by default. Patches
are grouped into mini-batches and optimized with AdamW on the weighted
cross-entropy plus soft Dice objective.
"""

import logging
import math
import time
from typing import List, Optional, Tuple

import numpy as np
import torch

from ..exceptions import ConfigurationError, DataError, NumericalFailureError
from ..models.config_models import GinConfig, PatchSpec, PretrainConfig, SscConfig
from ..models.report_models import CheckpointManifest
from ..models.volume_models import Dataset
from ..networks.checkpoint import Checkpoint
from ..networks.segnet import SegNet
from ..networks.sliding_window import model_placement
from .input_pipeline import InputPipeline
from .losses import supervised_loss
from .patch_sampler import crop, sample_origin

logger = logging.getLogger(__name__)


def check_compatibility(model: SegNet, pipeline: InputPipeline) -> None:
    """Model input channels must match the pipeline (12 iff SSC is used)."""
    if model.in_channels != pipeline.in_channels:
        raise ConfigurationError(
            f"Pipeline '{pipeline.kind.value}' produces {pipeline.in_channels} channels "
            f"but the model expects {model.in_channels}"
        )


def _step(
    model: SegNet,
    optimizer: torch.optim.Optimizer,
    batch: List[Tuple[np.ndarray, np.ndarray]],
    cfg: PretrainConfig,
) -> float:
    device, dtype = model_placement(model)
    x = torch.from_numpy(np.stack([b[0] for b in batch])).to(device=device, dtype=dtype)
    y = torch.from_numpy(np.stack([b[1] for b in batch])).to(device=device)
    optimizer.zero_grad(set_to_none=True)
    loss = supervised_loss(model.probabilities(x), y, cfg.loss_weights)
    if not torch.isfinite(loss):
        raise NumericalFailureError(f"Pre-training loss became {loss.item()}")
    loss.backward()
    optimizer.step()
    return float(loss.item())


def pretrain(
    model: SegNet,
    dataset: Dataset,
    cfg: PretrainConfig,
    patch: PatchSpec = PatchSpec(),
    ssc: Optional[SscConfig] = None,
    gin: Optional[GinConfig] = None,
) -> Checkpoint:
    """
    Train a model on labeled source-domain data.

    Args:
        model: Freshly initialized network (mutated in place)
        dataset: Labeled source-domain samples
        cfg: Pipeline, schedule and optimizer settings
        patch: Training patch size
        ssc: Descriptor settings for SSC pipelines
        gin: Augmentation settings for GIN pipelines

    Returns:
        Checkpoint whose manifest records the input pipeline and whose
        loss_trace holds the mean loss of every epoch
    """
    pipeline = InputPipeline(cfg.pipeline, ssc, gin, cfg.normalize_intensity)
    check_compatibility(model, pipeline)
    if not dataset.is_labeled:
        raise DataError(f"Pre-training needs a labeled dataset; '{dataset.domain_tag}' is not")
    if dataset.num_classes != model.num_classes:
        raise ConfigurationError(
            f"Dataset has {dataset.num_classes} classes but the model predicts {model.num_classes}"
        )

    manifest = CheckpointManifest(
        architecture=model.cfg,
        pipeline=cfg.pipeline,
        ssc=pipeline.ssc,
        gin=pipeline.gin,
        normalize_intensity=cfg.normalize_intensity,
        pretrain_config_hash=cfg.config_hash(),
        seeds={"init": model.cfg.seed, "pretrain": cfg.seed, "gin": pipeline.gin.seed},
    )
    trace: List[float] = []
    if cfg.epochs == 0:
        logger.info("Zero pre-training epochs: returning the initialization")
        return Checkpoint(model=model, manifest=manifest, loss_trace=trace)

    rng = np.random.default_rng(cfg.seed)
    gin_rng = np.random.default_rng(pipeline.gin.seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    model.train()

    logger.info(
        f"Pre-training pipeline={cfg.pipeline.value} on {len(dataset)} volumes for {cfg.epochs} epochs"
    )
    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        losses: List[float] = []
        batch: List[Tuple[np.ndarray, np.ndarray]] = []
        for index in rng.permutation(len(dataset)):
            sample = dataset.samples[int(index)]
            assert sample.label is not None
            x = pipeline.for_training(sample.image, gin_rng).as_channels()
            labels = sample.label.labels
            for _ in range(cfg.patches_per_volume):
                origin = sample_origin(
                    sample.image.spatial_shape,
                    patch.patch_size,
                    rng,
                    foreground=labels > 0,
                    foreground_probability=cfg.foreground_oversample,
                )
                batch.append((crop(x, origin, patch.patch_size), crop(labels, origin, patch.patch_size)))
                if len(batch) == cfg.batch_size:
                    losses.append(_step(model, optimizer, batch, cfg))
                    batch = []
        if batch:
            losses.append(_step(model, optimizer, batch, cfg))
        epoch_loss = float(np.mean(losses))
        if not math.isfinite(epoch_loss):
            raise NumericalFailureError(f"Epoch {epoch} loss is {epoch_loss}")
        trace.append(epoch_loss)
        logger.info(f"Epoch {epoch}/{cfg.epochs}: loss={epoch_loss:.4f} ({time.perf_counter() - started:.1f}s)")

    model.eval()
    return Checkpoint(model=model, manifest=manifest, loss_trace=trace)
