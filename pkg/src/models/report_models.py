"""
Manifest and score models for dgtta.

Contains Pydantic models for:
- CheckpointManifest: everything needed to rebuild a model and its input pipeline
- RunManifest: provenance record written into every artifact directory
- SurfaceDistance: HD95 value or the reason it is undefined
- ScoreRow / ScoreTable: per-case per-class evaluation results
"""

import math
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field, field_validator

from .config_models import GinConfig, PipelineKind, SegNetConfig, SscConfig

CHECKPOINT_FORMAT_VERSION = 1


class Stage(str, Enum):
    """Model stage in result tables."""

    BASE = "BS"
    ADAPTED = "+A"
    ADAPTED_NORM = "+A-nor"
    ADAPTED_ENCODER = "+A-enc"
    ADAPTED_DECODER = "+A-dec"


class CheckpointManifest(BaseModel):
    """Plain-text manifest stored next to serialized parameters."""

    format_version: int = Field(default=CHECKPOINT_FORMAT_VERSION)
    architecture: SegNetConfig
    pipeline: PipelineKind
    ssc: SscConfig = Field(default_factory=SscConfig)
    gin: GinConfig = Field(default_factory=GinConfig)
    normalize_intensity: bool = Field(default=True)
    batch_statistics: bool = Field(
        default=False, description="Batch-norm layers normalize with current-input statistics"
    )
    pretrain_config_hash: Optional[str] = None
    seeds: Dict[str, int] = Field(default_factory=dict)
    adaptation: Optional[Dict[str, Any]] = Field(
        default=None, description="AdaptationConfig dump when the parameters were adapted"
    )

    @property
    def in_channels(self) -> int:
        return self.architecture.in_channels

    @property
    def num_classes(self) -> int:
        return self.architecture.num_classes

    @property
    def norm_kind(self) -> str:
        return self.architecture.norm_kind.value

    def inference_signature(self) -> tuple:
        """Fields that must agree for models to share an input pipeline."""
        return (
            self.pipeline.value,
            self.in_channels,
            self.num_classes,
            self.normalize_intensity,
            self.ssc.config_hash() if self.pipeline.uses_ssc else None,
        )


class RunManifest(BaseModel):
    """Provenance of one artifact directory."""

    command_line: List[str] = Field(default_factory=list)
    config_snapshot: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    checkpoint_hashes: Dict[str, str] = Field(default_factory=dict)
    tool_version: str = Field(...)
    timings_s: Dict[str, float] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=datetime.now)


class SurfaceDistance(BaseModel):
    """HD95 in millimetres, or None with the reason it is undefined."""

    value: Optional[float] = Field(None, ge=0.0)
    reason: Optional[str] = None

    @property
    def is_defined(self) -> bool:
        return self.value is not None

    def as_float(self) -> float:
        """Value, or NaN when undefined."""
        return self.value if self.value is not None else math.nan


class ScoreRow(BaseModel):
    """Scores of one class in one case for one method stage."""

    case_id: str
    method: str
    stage: str
    class_id: int = Field(..., ge=0)
    dice: float = Field(..., ge=0.0, le=1.0)
    hd95: Optional[float] = Field(None, ge=0.0)

    @field_validator("method", "stage")
    def validate_names(cls, v: str) -> str:
        """Method and stage names must be non-empty."""
        if not v.strip():
            raise ValueError("Method and stage names cannot be empty")
        return v.strip()


SCORE_COLUMNS = ["case_id", "method", "stage", "class_id", "dice", "hd95"]


class ScoreTable(BaseModel):
    """Collection of score rows with tabular export."""

    rows: List[ScoreRow] = Field(default_factory=list)

    def extend(self, rows: List[ScoreRow]) -> None:
        self.rows.extend(rows)

    def to_dataframe(self) -> pd.DataFrame:
        """Long-format frame, one row per (case, method, stage, class)."""
        if not self.rows:
            return pd.DataFrame(columns=SCORE_COLUMNS)
        frame = pd.DataFrame([r.model_dump() for r in self.rows], columns=SCORE_COLUMNS)
        frame["hd95"] = frame["hd95"].astype(float)
        return frame

    def to_csv(self, path: str) -> None:
        self.to_dataframe().to_csv(path, index=False, float_format="%.6f")

    @classmethod
    def from_csv(cls, path: str) -> "ScoreTable":
        frame = pd.read_csv(path, dtype={"case_id": str, "method": str, "stage": str})
        rows = []
        for rec in frame.to_dict(orient="records"):
            hd = rec.get("hd95")
            rec["hd95"] = None if hd is None or (isinstance(hd, float) and math.isnan(hd)) else float(hd)
            rows.append(ScoreRow(**rec))
        return cls(rows=rows)
