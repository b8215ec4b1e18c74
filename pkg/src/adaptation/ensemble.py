"""
Prediction with single checkpoints and TTA ensembles.

A TTA ensemble adapts independent copies of one checkpoint to the same
target volume, member i using adaptation seed `seed + i`, then averages
the members' softmax maps before the per-voxel argmax.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Type

import numpy as np

from ..exceptions import ConfigurationError, InvalidArgumentError
from ..models.config_models import AdaptationConfig, PatchSpec
from ..models.volume_models import LabelMap, Volume
from ..networks.checkpoint import Checkpoint
from ..networks.sliding_window import argmax_labels, sliding_window_predict
from ..training.input_pipeline import InputPipeline
from .base_adapter import AdaptationResult, BaseAdapter
from .consistency_adapter import ConsistencyAdapter

logger = logging.getLogger(__name__)


def predict_probabilities(checkpoint: Checkpoint, v: Volume, spec: PatchSpec) -> Volume:
    """Class probabilities of a raw volume through the checkpoint's input pipeline."""
    network_input = InputPipeline.from_manifest(checkpoint.manifest).for_inference(v)
    return sliding_window_predict(checkpoint.model, network_input, spec)


def predict(checkpoint: Checkpoint, v: Volume, spec: PatchSpec) -> LabelMap:
    """Argmax segmentation of one checkpoint."""
    return ensemble_predict([checkpoint], v, spec)


def ensemble_predict(checkpoints: Sequence[Checkpoint], v: Volume, spec: PatchSpec) -> LabelMap:
    """
    Average softmax maps of several models and take the argmax.

    Args:
        checkpoints: Models sharing class count and input pipeline
        v: Raw input volume
        spec: Sliding-window patch geometry

    Returns:
        LabelMap on v's grid
    """
    if not checkpoints:
        raise InvalidArgumentError("Ensemble needs at least one model")
    signatures = {c.manifest.inference_signature() for c in checkpoints}
    if len(signatures) > 1:
        raise ConfigurationError(f"Ensemble members disagree on input pipeline or classes: {signatures}")

    total: Optional[np.ndarray] = None
    for ckpt in checkpoints:
        probs = predict_probabilities(ckpt, v, spec).as_channels().astype(np.float64)
        total = probs if total is None else total + probs
    assert total is not None
    mean = Volume(data=total / len(checkpoints), spacing=v.spacing)
    return LabelMap(
        labels=argmax_labels(mean), num_classes=checkpoints[0].manifest.num_classes, spacing=v.spacing
    )


class TTAEnsemble:
    """
    Ensemble of independently adapted copies of one checkpoint.

    Members differ only in their adaptation RNG seed.
    """

    def __init__(
        self,
        checkpoint: Checkpoint,
        cfg: AdaptationConfig,
        patch: PatchSpec = PatchSpec(),
        adapter_cls: Type[BaseAdapter] = ConsistencyAdapter,
    ):
        """
        Initialize the ensemble.

        Args:
            checkpoint: Pre-trained source checkpoint
            cfg: Adaptation config; cfg.ensemble_size members are built
            patch: Patch geometry for adaptation and inference
            adapter_cls: Adapter type every member uses
        """
        self.checkpoint = checkpoint
        self.cfg = cfg
        self.patch = patch
        self.adapters = [
            adapter_cls(checkpoint, cfg.model_copy(update={"seed": cfg.seed + i}), patch)
            for i in range(cfg.ensemble_size)
        ]
        self.results: List[AdaptationResult] = []
        logger.info(f"Initialized TTA ensemble with {len(self.adapters)} {adapter_cls.name} members")

    def adapt(self, target: Volume, workers: int = 1) -> List[Checkpoint]:
        """Adapt every member to the target; returns the adapted checkpoints."""
        prepared = self.adapters[0].prepare_target(target)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                self.results = list(pool.map(lambda a: a.adapt(target, prepared), self.adapters))
        else:
            self.results = [a.adapt(target, prepared) for a in self.adapters]
        return self.members

    @property
    def members(self) -> List[Checkpoint]:
        return [
            r.to_checkpoint(self.checkpoint, a.cfg) for r, a in zip(self.results, self.adapters)
        ]

    @property
    def loss_traces(self) -> List[List[float]]:
        return [r.loss_trace for r in self.results]

    def predict(self, target: Volume) -> LabelMap:
        """Adapted-ensemble segmentation (adapts first if needed)."""
        if not self.results:
            self.adapt(target)
        return ensemble_predict(self.members, target, self.patch)
