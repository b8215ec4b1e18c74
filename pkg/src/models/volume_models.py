"""
Volumetric data models for dgtta.

Contains Pydantic models for:
- Volume: 3D (or channel x 3D) intensity grid with physical spacing
- LabelMap: integer class-per-voxel grid sharing a Volume's geometry
- Sample / Dataset: ordered (image, optional label) collections tagged by domain

Canonical axis order is (channel, z, y, x); spacing is given per spatial
axis in the same (z, y, x) order, in millimetres.
"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Spacing = Tuple[float, float, float]

DEFAULT_SPACING: Spacing = (1.5, 1.5, 1.5)


def _validate_spacing(v: Tuple[float, ...]) -> Spacing:
    if len(v) != 3:
        raise ValueError(f"Spacing needs 3 components, got {len(v)}")
    if any(not np.isfinite(s) or s <= 0 for s in v):
        raise ValueError(f"Spacing components must be strictly positive, got {tuple(v)}")
    return (float(v[0]), float(v[1]), float(v[2]))


class Volume(BaseModel):
    """3D scalar or multi-channel grid with physical voxel spacing."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray = Field(..., description="(z, y, x) or (c, z, y, x) intensities")
    spacing: Spacing = Field(default=DEFAULT_SPACING, description="Voxel size per axis in mm")

    @field_validator("data", mode="before")
    def validate_data(cls, v: np.ndarray) -> np.ndarray:
        """Ensure a finite floating 3D or 4D array."""
        arr = np.asarray(v)
        if arr.ndim not in (3, 4):
            raise ValueError(f"Volume data must be 3D or 4D, got {arr.ndim}D")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Volume data contains NaN or Inf")
        return arr

    @field_validator("spacing", mode="before")
    def validate_spacing(cls, v: Tuple[float, ...]) -> Spacing:
        """Ensure strictly positive spacing."""
        return _validate_spacing(tuple(v))

    @property
    def channels(self) -> int:
        """Number of channels (1 for plain 3D data)."""
        return 1 if self.data.ndim == 3 else int(self.data.shape[0])

    @property
    def spatial_shape(self) -> Tuple[int, int, int]:
        """Shape of the spatial (z, y, x) grid."""
        s = self.data.shape[-3:]
        return (int(s[0]), int(s[1]), int(s[2]))

    def as_channels(self) -> np.ndarray:
        """Data with an explicit leading channel axis."""
        return self.data[None] if self.data.ndim == 3 else self.data

    def with_data(self, data: np.ndarray) -> "Volume":
        """Copy of this volume's geometry around new data."""
        return Volume(data=data, spacing=self.spacing)

    @property
    def dynamic_range(self) -> float:
        """max - min of the intensities."""
        return float(self.data.max() - self.data.min())


class LabelMap(BaseModel):
    """Integer class-per-voxel grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    labels: np.ndarray = Field(..., description="(z, y, x) class indices")
    num_classes: int = Field(..., ge=1, description="Number of classes including background")
    spacing: Spacing = Field(default=DEFAULT_SPACING, description="Voxel size per axis in mm")

    @field_validator("labels", mode="before")
    def validate_labels(cls, v: np.ndarray) -> np.ndarray:
        """Ensure an integer 3D array."""
        arr = np.asarray(v)
        if arr.ndim != 3:
            raise ValueError(f"Label data must be 3D, got {arr.ndim}D")
        if not np.issubdtype(arr.dtype, np.integer):
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
                raise ValueError("Label data must contain integral values")
            arr = arr.astype(np.int64)
        return arr

    @field_validator("spacing", mode="before")
    def validate_spacing(cls, v: Tuple[float, ...]) -> Spacing:
        """Ensure strictly positive spacing."""
        return _validate_spacing(tuple(v))

    @model_validator(mode="after")
    def validate_range(self) -> "LabelMap":
        """Every voxel value must lie in [0, num_classes)."""
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(
                f"Label values must lie in [0, {self.num_classes}), "
                f"got [{self.labels.min()}, {self.labels.max()}]"
            )
        return self

    @property
    def spatial_shape(self) -> Tuple[int, int, int]:
        """Shape of the label grid."""
        s = self.labels.shape
        return (int(s[0]), int(s[1]), int(s[2]))

    def mask(self, class_id: int) -> np.ndarray:
        """Boolean mask of one class."""
        return self.labels == class_id

    def matches(self, volume: Volume) -> bool:
        """Whether this label map shares the volume's geometry."""
        return self.spatial_shape == volume.spatial_shape and np.allclose(
            self.spacing, volume.spacing
        )


class Sample(BaseModel):
    """One case: an image and its optional reference labels."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    case_id: str = Field(..., min_length=1)
    image: Volume
    label: Optional[LabelMap] = None

    @model_validator(mode="after")
    def validate_geometry(self) -> "Sample":
        """Label geometry must match the image."""
        if self.label is not None and not self.label.matches(self.image):
            raise ValueError(
                f"Case '{self.case_id}': label geometry {self.label.spatial_shape} "
                f"does not match image {self.image.spatial_shape}"
            )
        return self


class Dataset(BaseModel):
    """Ordered list of samples from one imaging domain."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: List[Sample] = Field(default_factory=list)
    domain_tag: str = Field(..., min_length=1)

    @model_validator(mode="after")
    def validate_samples(self) -> "Dataset":
        """Labeled samples share num_classes; case ids are unique."""
        ids = self.case_ids()
        if len(set(ids)) != len(ids):
            raise ValueError("Case ids must be unique within a dataset")
        classes = {s.label.num_classes for s in self.samples if s.label is not None}
        if len(classes) > 1:
            raise ValueError(f"Labeled samples disagree on num_classes: {sorted(classes)}")
        return self

    def __len__(self) -> int:
        return len(self.samples)

    def case_ids(self) -> List[str]:
        return [s.case_id for s in self.samples]

    @property
    def is_labeled(self) -> bool:
        """True when every sample carries labels."""
        return bool(self.samples) and all(s.label is not None for s in self.samples)

    @property
    def num_classes(self) -> Optional[int]:
        """Shared class count of the labeled samples."""
        for s in self.samples:
            if s.label is not None:
                return s.label.num_classes
        return None

    def subset(self, start: int, stop: Optional[int] = None) -> "Dataset":
        """Contiguous slice of samples with the same domain tag."""
        return Dataset(samples=self.samples[start:stop], domain_tag=self.domain_tag)
