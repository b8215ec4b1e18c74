"""
Network input pipelines.

    plain    z-normalize
    gin      z-normalize -> GIN (training only)
    ssc      z-normalize -> SSC descriptor
    gin_ssc  z-normalize -> GIN (training only) -> SSC descriptor

GIN is a training augmentation and never runs at inference; SSC runs
whenever the model was trained on descriptors. A checkpoint manifest fully
determines the inference pipeline.
"""

import logging
from typing import Optional

import numpy as np

from ..models.config_models import GinConfig, PipelineKind, SscConfig
from ..models.report_models import CheckpointManifest
from ..models.volume_models import Volume
from ..tools.gin_augment import gin_augment
from ..tools.ssc_descriptor import NUM_SSC_CHANNELS, ssc_descriptor, z_normalize

logger = logging.getLogger(__name__)


class InputPipeline:
    """Maps raw single-channel volumes to network inputs."""

    def __init__(
        self,
        kind: PipelineKind,
        ssc: Optional[SscConfig] = None,
        gin: Optional[GinConfig] = None,
        normalize_intensity: bool = True,
    ):
        self.kind = PipelineKind(kind)
        self.ssc = ssc or SscConfig()
        self.gin = gin or GinConfig()
        self.normalize_intensity = normalize_intensity

    @classmethod
    def from_manifest(cls, manifest: CheckpointManifest) -> "InputPipeline":
        return cls(manifest.pipeline, manifest.ssc, manifest.gin, manifest.normalize_intensity)

    @property
    def in_channels(self) -> int:
        """Channel count of the produced network input."""
        return NUM_SSC_CHANNELS if self.kind.uses_ssc else 1

    def normalize(self, v: Volume) -> Volume:
        if not self.normalize_intensity:
            return v
        return v.with_data(z_normalize(v.data).astype(np.float32))

    def describe(self, v: Volume) -> Volume:
        """SSC step (identity for pipelines without descriptors)."""
        return ssc_descriptor(v, self.ssc) if self.kind.uses_ssc else v

    def for_inference(self, v: Volume) -> Volume:
        """Deterministic input of a raw volume."""
        return self.describe(self.normalize(v))

    def for_training(self, v: Volume, rng: np.random.Generator) -> Volume:
        """Input with a freshly sampled GIN network when the pipeline uses GIN."""
        x = self.normalize(v)
        if self.kind.uses_gin:
            x = gin_augment(x, self.gin, rng)
        return self.describe(x)

    def augmented(self, v: Volume, rng: np.random.Generator) -> Volume:
        """GIN-augmented input of an already normalized volume, for any pipeline."""
        return self.describe(gin_augment(v, self.gin, rng))
