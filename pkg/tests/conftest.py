"""
Test configuration and fixtures for dgtta.

Contains shared fixtures for the entire test suite. Networks, grids and
benchmarks are kept tiny so the default (non-slow) suite runs on a CPU.
"""

from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
import pytest
import torch
import yaml
from scipy import ndimage

from src.config.run_config import RunConfig, ScenarioConfig, dump_run_config
from src.models.config_models import (
    AdaptationConfig,
    IntensityDomain,
    NormKind,
    PatchSpec,
    PhantomConfig,
    PipelineKind,
    PretrainConfig,
    SegNetConfig,
    SpatialConfig,
    TransferKind,
)
from src.models.report_models import CheckpointManifest
from src.models.volume_models import Dataset, LabelMap, Sample, Volume
from src.networks.checkpoint import Checkpoint
from src.networks.segnet import build_segnet

NUM_CLASSES = 3


@pytest.fixture(autouse=True)
def seed_torch():
    """Seed torch's global generator for every test."""
    torch.manual_seed(0)
    yield


def tiny_segnet_config(
    pipeline: PipelineKind = PipelineKind.PLAIN,
    norm_kind: NormKind = NormKind.INSTANCE,
    seed: int = 0,
) -> SegNetConfig:
    """Two-stage network small enough for CPU unit tests."""
    return SegNetConfig(
        in_channels=12 if pipeline.uses_ssc else 1,
        num_classes=NUM_CLASSES,
        base_width=4,
        max_width=16,
        depth=2,
        norm_kind=norm_kind,
        seed=seed,
    )


def tiny_phantom_config(**overrides) -> PhantomConfig:
    """32^3 three-class benchmark with three paired samples."""
    values = dict(
        grid_size=32,
        num_classes=NUM_CLASSES,
        num_samples=3,
        num_train=2,
        domain_a=IntensityDomain(
            class_intensity_map=[0.1, 0.8, 0.4], noise_sigma=0.02, bias_field_strength=0.05
        ),
        domain_b=IntensityDomain(
            class_intensity_map=[0.1, 0.8, 0.4],
            intensity_transfer=TransferKind.INVERTED,
            noise_sigma=0.04,
            bias_field_strength=0.2,
        ),
        seed=7,
    )
    values.update(overrides)
    return PhantomConfig(**values)


def tiny_run_config(**scenario) -> RunConfig:
    """Complete run config for smoke scenarios (one epoch, one TTA step)."""
    scenario_values = dict(pipelines=[PipelineKind.PLAIN], param_groups=["all"], reference=None)
    scenario_values.update(scenario)
    return RunConfig(
        segnet=tiny_segnet_config(),
        patch=PatchSpec(patch_size=(16, 16, 16), stride=(16, 16, 16)),
        pretrain=PretrainConfig(epochs=1, batch_size=2, learning_rate=1e-3),
        tta=AdaptationConfig(num_steps=1, patches_per_step=1, ensemble_size=1, learning_rate=1e-4),
        spatial=SpatialConfig(max_rotation_deg=5.0, max_translation_vox=2.0),
        phantom=tiny_phantom_config(),
        scenario=ScenarioConfig(**scenario_values),
    )


@pytest.fixture
def tiny_patch() -> PatchSpec:
    """16^3 patches without overlap."""
    return PatchSpec(patch_size=(16, 16, 16), stride=(16, 16, 16))


@pytest.fixture
def overlapping_patch() -> PatchSpec:
    """16^3 patches with half-patch stride."""
    return PatchSpec(patch_size=(16, 16, 16), stride=(8, 8, 8))


@pytest.fixture
def phantom_config() -> PhantomConfig:
    """Tiny paired benchmark config."""
    return tiny_phantom_config()


@pytest.fixture
def run_config() -> RunConfig:
    """Tiny end-to-end run config."""
    return tiny_run_config()


@pytest.fixture
def run_config_file(tmp_path: Path, run_config: RunConfig) -> Path:
    """Tiny run config written as YAML."""
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(dump_run_config(run_config), sort_keys=False), encoding="utf-8")
    return path


def make_smooth_volume(
    shape: Tuple[int, int, int] = (24, 24, 24),
    seed: int = 0,
    sigma: float = 3.0,
    spacing: Tuple[float, float, float] = (1.5, 1.5, 1.5),
) -> Volume:
    """Gaussian-filtered noise rescaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    data = ndimage.gaussian_filter(rng.normal(size=shape), sigma=sigma, mode="nearest")
    data = (data - data.min()) / (data.max() - data.min())
    return Volume(data=data.astype(np.float32), spacing=spacing)


@pytest.fixture
def smooth_volume() -> Callable[..., Volume]:
    """Factory for smooth random volumes."""
    return make_smooth_volume


def make_labeled_sample(case: str = "case_000", size: int = 32, seed: int = 0) -> Sample:
    """Two boxes on a noisy background, image brightness tied to the class."""
    labels = np.zeros((size,) * 3, dtype=np.int64)
    labels[4:14, 4:14, 4:14] = 1
    labels[18:28, 16:28, 18:28] = 2
    rng = np.random.default_rng(seed)
    image = np.array([0.1, 0.9, 0.5])[labels] + rng.normal(0.0, 0.02, size=labels.shape)
    return Sample(
        case_id=case,
        image=Volume(data=image.astype(np.float32)),
        label=LabelMap(labels=labels, num_classes=NUM_CLASSES),
    )


@pytest.fixture
def labeled_sample() -> Sample:
    """One labeled 32^3 case."""
    return make_labeled_sample()


@pytest.fixture
def labeled_dataset() -> Dataset:
    """Two labeled 32^3 cases of domain A."""
    return Dataset(
        samples=[make_labeled_sample("case_000", seed=0), make_labeled_sample("case_001", seed=1)],
        domain_tag="A",
    )


def make_checkpoint(
    pipeline: PipelineKind = PipelineKind.PLAIN,
    norm_kind: NormKind = NormKind.INSTANCE,
    seed: int = 0,
) -> Checkpoint:
    """Untrained tiny checkpoint with a consistent manifest."""
    arch = tiny_segnet_config(pipeline, norm_kind, seed)
    model = build_segnet(arch)
    model.eval()
    manifest = CheckpointManifest(architecture=arch, pipeline=pipeline, seeds={"init": seed})
    return Checkpoint(model=model, manifest=manifest)


@pytest.fixture
def checkpoint_factory() -> Callable[..., Checkpoint]:
    """Factory for untrained tiny checkpoints."""
    return make_checkpoint


@pytest.fixture
def plain_checkpoint() -> Checkpoint:
    """Untrained plain-pipeline instance-norm checkpoint."""
    return make_checkpoint()


def random_probabilities(
    shape: Tuple[int, ...], seed: int = 0, dtype: torch.dtype = torch.float64, generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    """Softmax of Gaussian logits along dim 1."""
    gen = generator or torch.Generator().manual_seed(seed)
    return torch.softmax(torch.randn(shape, generator=gen, dtype=dtype), dim=1)
