"""
Run-config files.

A run config is a YAML mapping of sections, each a mapping of keys:

    gin:       GinConfig
    ssc:       SscConfig
    spatial:   SpatialConfig (TTA branch augmentation)
    segnet:    SegNetConfig (in_channels is derived from the pipeline)
    patch:     PatchSpec
    pretrain:  PretrainConfig
    tta:       AdaptationConfig (branch ranges come from `spatial`)
    phantom:   PhantomConfig
    scenario:  ScenarioConfig

Unknown sections or keys are configuration errors.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import Field, ValidationError, field_validator

from ..exceptions import ConfigurationError
from ..models.config_models import (
    AdaptationConfig,
    GinConfig,
    NormKind,
    ParamGroup,
    PatchSpec,
    PhantomConfig,
    PipelineKind,
    PretrainConfig,
    SegNetConfig,
    SpatialConfig,
    SscConfig,
    StrictModel,
)

logger = logging.getLogger(__name__)


class ScenarioConfig(StrictModel):
    """End-to-end experiment: which pipelines, stages and comparisons to run."""

    pipelines: List[PipelineKind] = Field(
        default_factory=lambda: [PipelineKind.PLAIN, PipelineKind.GIN_SSC]
    )
    norm_kinds: List[NormKind] = Field(default_factory=lambda: [NormKind.INSTANCE])
    param_groups: List[ParamGroup] = Field(default_factory=lambda: [ParamGroup.ALL])
    data_dir: Optional[str] = Field(
        default=None, description="Existing benchmark written by synth-gen; generated when omitted"
    )
    reference: Optional[str] = Field(
        default="plain/BS", description="Row key the significance tests compare against"
    )
    evaluate_in_domain: bool = Field(default=True, description="Also score BS models on source test cases")
    max_test_cases: Optional[int] = Field(default=None, ge=1)
    tent_baseline: bool = Field(default=False, description="Also adapt batch-norm models with Tent")
    figure_format: Literal["png", "svg"] = Field(default="png")
    hd95_variant: Literal["pooled", "max_directed"] = Field(default="pooled")

    @field_validator("pipelines", "norm_kinds", "param_groups")
    def validate_non_empty(cls, v: List[Any]) -> List[Any]:
        """Lists must be non-empty and duplicate-free."""
        if not v:
            raise ValueError("List must not be empty")
        if len(set(v)) != len(v):
            raise ValueError("List entries must be unique")
        return v


class RunConfig(StrictModel):
    """All sections of a run-config file."""

    gin: GinConfig = Field(default_factory=GinConfig)
    ssc: SscConfig = Field(default_factory=SscConfig)
    spatial: SpatialConfig = Field(default_factory=SpatialConfig)
    segnet: SegNetConfig = Field(default_factory=SegNetConfig)
    patch: PatchSpec = Field(default_factory=PatchSpec)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    tta: AdaptationConfig = Field(default_factory=AdaptationConfig)
    phantom: PhantomConfig = Field(default_factory=PhantomConfig)
    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)

    def adaptation(self) -> AdaptationConfig:
        """TTA config with the spatial section folded in."""
        return self.tta.model_copy(update={"spatial": self.spatial})

    def segnet_for(self, pipeline: PipelineKind, norm_kind: Optional[NormKind] = None) -> SegNetConfig:
        """Architecture with in_channels matching a pipeline."""
        update: Dict[str, Any] = {"in_channels": 12 if pipeline.uses_ssc else 1}
        if norm_kind is not None:
            update["norm_kind"] = norm_kind
        return self.segnet.model_copy(update=update)

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with every section seed set to `seed`."""
        return self.model_copy(
            update={
                "gin": self.gin.model_copy(update={"seed": seed}),
                "segnet": self.segnet.model_copy(update={"seed": seed}),
                "pretrain": self.pretrain.model_copy(update={"seed": seed}),
                "tta": self.tta.model_copy(update={"seed": seed}),
                "phantom": self.phantom.model_copy(update={"seed": seed}),
            }
        )


def parse_run_config(data: Optional[Dict[str, Any]]) -> RunConfig:
    """Validate a section mapping into a RunConfig."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigurationError("Run config must be a mapping of sections")
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid run config: {e}") from e


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Read a YAML run config; defaults when path is None."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Run config not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Run config {path} is not valid YAML: {e}") from e
    config = parse_run_config(data)
    logger.debug(f"Loaded run config {path} (hash {config.config_hash()[:12]})")
    return config


def dump_run_config(config: RunConfig) -> Dict[str, Any]:
    """JSON-compatible snapshot for manifests."""
    return config.model_dump(mode="json")
