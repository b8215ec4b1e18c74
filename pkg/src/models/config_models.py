"""
Configuration models for dgtta.

Contains Pydantic models for every tunable component:
- SscConfig, GinConfig, SpatialConfig: input features and augmentations
- SegNetConfig, PatchSpec: network architecture and patch geometry
- PretrainConfig, AdaptationConfig: optimization of the two method steps
- IntensityDomain, PhantomConfig: the synthetic cross-domain benchmark
"""

import hashlib
import json
from enum import Enum
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class PipelineKind(str, Enum):
    """Input pipeline used to pre-train a model."""

    PLAIN = "plain"
    GIN = "gin"
    SSC = "ssc"
    GIN_SSC = "gin_ssc"

    @property
    def uses_gin(self) -> bool:
        return self in (PipelineKind.GIN, PipelineKind.GIN_SSC)

    @property
    def uses_ssc(self) -> bool:
        return self in (PipelineKind.SSC, PipelineKind.GIN_SSC)


class NormKind(str, Enum):
    """Normalization layer family of the segmentation network."""

    INSTANCE = "instance"
    BATCH = "batch"


class ParamGroup(str, Enum):
    """Named parameter groups for partial adaptation."""

    NORM = "norm"
    ENCODER = "encoder"
    DECODER = "decoder"
    ALL = "all"


class TransferKind(str, Enum):
    """Intensity transfer functions of a synthetic imaging domain."""

    IDENTITY = "identity"
    INVERTED = "inverted"
    GAMMA = "gamma"


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class SscConfig(StrictModel):
    """Self-similarity context descriptor parameters."""

    patch_size: int = Field(default=1, ge=1, description="Patch edge length in voxels")
    patch_distance: int = Field(default=1, ge=1, description="Neighbour distance in voxels")
    variance_clamp: Tuple[float, float] = Field(
        default=(0.001, 1000.0), description="(low, high) factors on the mean local variance"
    )
    stability_eps: float = Field(default=1e-12, gt=0.0)
    normalize_input: bool = Field(
        default=True, description="z-normalize the image before computing the descriptor"
    )

    @field_validator("variance_clamp")
    def validate_clamp(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        """Require 0 < low < 1 < high."""
        low, high = v
        if not (0.0 < low < 1.0 < high):
            raise ValueError(f"Variance clamp needs 0 < low < 1 < high, got {v}")
        return v


class GinConfig(StrictModel):
    """Global intensity non-linear augmentation parameters."""

    num_layers: int = Field(default=4, ge=1)
    hidden_channels: int = Field(default=2, ge=1)
    kernel_size: int = Field(default=3, ge=1)
    negative_slope: float = Field(default=0.01, ge=0.0)
    alpha_distribution: Tuple[float, float] = Field(
        default=(0.0, 1.0), description="Uniform law of the blend weight alpha"
    )
    renormalize_output: bool = Field(default=True)
    seed: int = Field(default=0, description="Seed of the augmentation RNG stream")

    @field_validator("kernel_size")
    def validate_kernel(cls, v: int) -> int:
        """Kernel must be odd to keep the grid aligned."""
        if v % 2 == 0:
            raise ValueError("GIN kernel size must be odd")
        return v

    @field_validator("alpha_distribution")
    def validate_alpha(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        """Require 0 <= low <= high <= 1."""
        low, high = v
        if not (0.0 <= low <= high <= 1.0):
            raise ValueError(f"Alpha law needs 0 <= low <= high <= 1, got {v}")
        return v


class SpatialConfig(StrictModel):
    """Ranges of the random affine branch augmentations."""

    max_rotation_deg: float = Field(default=10.0, ge=0.0, le=180.0)
    max_scale_delta: float = Field(default=0.1, ge=0.0, lt=1.0)
    max_translation_vox: float = Field(default=5.0, ge=0.0)
    validity_threshold: float = Field(default=0.999, gt=0.0, lt=1.0)
    sentinel: float = Field(default=-1.0, description="Fill value for out-of-field voxels")

    @field_validator("sentinel")
    def validate_sentinel(cls, v: float) -> float:
        """Sentinel must lie outside the probability range."""
        if 0.0 <= v <= 1.0:
            raise ValueError("Sentinel must lie outside [0, 1]")
        return v


class PatchSpec(StrictModel):
    """Patch geometry for training, adaptation and sliding-window inference."""

    patch_size: Tuple[int, int, int] = Field(default=(64, 64, 64))
    stride: Tuple[int, int, int] = Field(default=(32, 32, 32))

    @model_validator(mode="after")
    def validate_stride(self) -> "PatchSpec":
        """Stride must be positive and not exceed the patch size."""
        for p, s in zip(self.patch_size, self.stride):
            if p < 1 or s < 1:
                raise ValueError("Patch size and stride must be positive")
            if s > p:
                raise ValueError(f"Stride {self.stride} exceeds patch size {self.patch_size}")
        return self


class SegNetConfig(StrictModel):
    """Architecture hyperparameters of the encoder-decoder network."""

    in_channels: int = Field(default=1, ge=1)
    num_classes: int = Field(default=4, ge=2)
    base_width: int = Field(default=16, ge=1)
    max_width: int = Field(default=320, ge=1)
    depth: int = Field(default=4, ge=1, description="Number of encoder stages before the bottleneck")
    norm_kind: NormKind = Field(default=NormKind.INSTANCE)
    norm_affine: bool = Field(default=True)
    seed: int = Field(default=0, description="Initialization seed")

    @field_validator("in_channels")
    def validate_in_channels(cls, v: int) -> int:
        """Raw images have one channel, SSC descriptors twelve."""
        if v not in (1, 12):
            raise ValueError("in_channels must be 1 (raw) or 12 (SSC)")
        return v


class LossWeights(StrictModel):
    """Weights of the supervised cross-entropy and Dice terms."""

    ce: float = Field(default=1.0, ge=0.0)
    dice: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def validate_not_both_zero(self) -> "LossWeights":
        """At least one term must contribute."""
        if self.ce == 0.0 and self.dice == 0.0:
            raise ValueError("Loss weights must not both be zero")
        return self


class PretrainConfig(StrictModel):
    """Source-domain supervised pre-training."""

    pipeline: PipelineKind = Field(default=PipelineKind.PLAIN)
    epochs: int = Field(default=20, ge=0)
    batch_size: int = Field(default=2, ge=1)
    patches_per_volume: int = Field(default=1, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    foreground_oversample: float = Field(default=1.0 / 3.0, ge=0.0, le=1.0)
    normalize_intensity: bool = Field(default=True, description="z-normalize before GIN/SSC")
    seed: int = Field(default=0)


class AdaptationConfig(StrictModel):
    """Test-time adaptation hyperparameters."""

    learning_rate: float = Field(default=1e-5, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    num_steps: int = Field(default=12, ge=0)
    patches_per_step: int = Field(default=16, ge=1)
    loss_exponent: Literal[1, 2] = Field(default=2)
    stability_eps: float = Field(default=1e-8, gt=0.0)
    class_subset: Optional[List[int]] = Field(
        default=None, description="Classes optimized for consistency; None means all foreground"
    )
    param_group: ParamGroup = Field(default=ParamGroup.ALL)
    ensemble_size: int = Field(default=3, ge=1)
    foreground_ratio: float = Field(
        default=2.0 / 3.0, ge=0.0, le=1.0, description="Share of patches centred on predicted foreground"
    )
    intensity_augmentation: bool = Field(
        default=False, description="Also apply fresh GIN networks inside both branches"
    )
    spatial: SpatialConfig = Field(default_factory=SpatialConfig)
    seed: int = Field(default=0)

    @field_validator("class_subset")
    def validate_class_subset(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        """Class subset must be non-empty, non-negative and duplicate-free."""
        if v is None:
            return v
        if not v:
            raise ValueError("Class subset must not be empty")
        if any(c < 0 for c in v):
            raise ValueError("Class indices must be non-negative")
        if len(set(v)) != len(v):
            raise ValueError("Class indices must be unique")
        return sorted(v)

    def resolve_classes(self, num_classes: int) -> List[int]:
        """Concrete class list for a model with num_classes outputs."""
        classes = self.class_subset if self.class_subset is not None else list(range(1, num_classes))
        bad = [c for c in classes if c >= num_classes]
        if bad:
            raise ValueError(f"Class indices {bad} invalid for {num_classes} classes")
        return list(classes)


class IntensityDomain(StrictModel):
    """Rendering rules of one synthetic imaging domain."""

    class_intensity_map: List[float] = Field(..., min_length=2)
    intensity_transfer: TransferKind = Field(default=TransferKind.IDENTITY)
    gamma: float = Field(default=1.0, gt=0.0, description="Exponent of the gamma transfer, applied after inversion too")
    noise_sigma: float = Field(default=0.0, ge=0.0)
    bias_field_strength: float = Field(default=0.0, ge=0.0, lt=1.0)
    intensity_range: Tuple[float, float] = Field(default=(-0.5, 1.5))

    @field_validator("intensity_range")
    def validate_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        """Range must be ordered."""
        if v[0] >= v[1]:
            raise ValueError("Intensity range must be (low, high) with low < high")
        return v


def _default_domain_a() -> IntensityDomain:
    return IntensityDomain(
        class_intensity_map=[0.1, 0.8, 0.5, 0.3],
        intensity_transfer=TransferKind.IDENTITY,
        noise_sigma=0.03,
        bias_field_strength=0.05,
    )


def _default_domain_b() -> IntensityDomain:
    return IntensityDomain(
        class_intensity_map=[0.1, 0.8, 0.5, 0.3],
        intensity_transfer=TransferKind.INVERTED,
        gamma=0.35,
        noise_sigma=0.06,
        bias_field_strength=0.3,
    )


class PhantomConfig(StrictModel):
    """Synthetic paired cross-domain benchmark."""

    grid_size: int = Field(default=64, ge=32)
    num_classes: int = Field(default=4, ge=2)
    shapes_per_class: int = Field(default=1, ge=1)
    num_samples: int = Field(default=50, ge=1)
    num_train: int = Field(default=40, ge=0, description="Leading samples used as source training set")
    spacing_mm: float = Field(default=1.5, gt=0.0)
    class_fraction_bounds: Tuple[float, float] = Field(default=(0.005, 0.10))
    target_fraction_range: Tuple[float, float] = Field(default=(0.015, 0.045))
    max_retries: int = Field(default=25, ge=1)
    resolution_gap: bool = Field(default=False, description="Render domain B at 2x spacing")
    domain_a: IntensityDomain = Field(default_factory=_default_domain_a)
    domain_b: IntensityDomain = Field(default_factory=_default_domain_b)
    seed: int = Field(default=0)

    @model_validator(mode="after")
    def validate_domains(self) -> "PhantomConfig":
        """Intensity maps cover every class; splits fit the sample count."""
        for name, dom in (("domain_a", self.domain_a), ("domain_b", self.domain_b)):
            if len(dom.class_intensity_map) != self.num_classes:
                raise ValueError(
                    f"{name}.class_intensity_map has {len(dom.class_intensity_map)} "
                    f"entries for {self.num_classes} classes"
                )
        if self.num_train > self.num_samples:
            raise ValueError("num_train exceeds num_samples")
        low, high = self.class_fraction_bounds
        if not (0.0 < low < high < 1.0):
            raise ValueError("class_fraction_bounds must satisfy 0 < low < high < 1")
        return self
