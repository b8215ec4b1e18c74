"""
Unit tests for the Tent baseline in dgtta.
"""

import pytest
import torch

from src.adaptation.tent_adapter import TENT_LEARNING_RATE, TentAdapter, tent_adapt
from src.exceptions import ConfigurationError
from src.models.config_models import AdaptationConfig, NormKind, ParamGroup, PipelineKind
from src.models.report_models import CheckpointManifest
from src.networks.checkpoint import Checkpoint
from src.networks.segnet import build_segnet
from src.training.input_pipeline import InputPipeline
from src.training.losses import entropy_loss
from tests.conftest import tiny_segnet_config


def patch_entropy(model, network_input) -> float:
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(network_input.as_channels())[None]
        return float(entropy_loss(model.probabilities(x)))


class TestTentAdapter:
    """Test TentAdapter and tent_adapt."""

    def test_entropy_decreases(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test entropy on a single-patch volume drops after adaptation."""
        v = smooth_volume(shape=(16, 16, 16))
        network_input = InputPipeline.from_manifest(plain_checkpoint.manifest).for_inference(v)
        before = patch_entropy(plain_checkpoint.model, network_input)

        result = tent_adapt(plain_checkpoint, v, steps=10, lr=5e-3, patch=tiny_patch)

        assert len(result.loss_trace) == 10
        assert patch_entropy(result.model, network_input) < before

    def test_only_norm_parameters_change(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test convolution weights keep their source values."""
        result = tent_adapt(plain_checkpoint, smooth_volume(shape=(16, 16, 16)), steps=2, patch=tiny_patch)
        source = dict(plain_checkpoint.model.named_parameters())

        for name, p in result.model.named_parameters():
            module = result.model.get_submodule(name.rsplit(".", 1)[0])
            if isinstance(module, (torch.nn.Conv3d, torch.nn.ConvTranspose3d)):
                assert torch.equal(p, source[name])

    def test_group_is_always_norm(self, plain_checkpoint, tiny_patch):
        """Test a configured group is overridden by the normalization group."""
        adapter = TentAdapter(plain_checkpoint, AdaptationConfig(param_group=ParamGroup.ALL), tiny_patch)

        assert adapter.parameter_group == ParamGroup.NORM

    def test_batch_norm_model(self, checkpoint_factory, smooth_volume, tiny_patch):
        """Test batch-norm models adapt in batch-statistics mode."""
        ckpt = checkpoint_factory(norm_kind=NormKind.BATCH)
        result = tent_adapt(ckpt, smooth_volume(shape=(16, 16, 16)), steps=1, patch=tiny_patch)

        assert result.batch_statistics

    def test_requires_affine_norms(self, tiny_patch):
        """Test models without affine normalization cannot run Tent."""
        arch = tiny_segnet_config().model_copy(update={"norm_affine": False})
        ckpt = Checkpoint(
            model=build_segnet(arch), manifest=CheckpointManifest(architecture=arch, pipeline=PipelineKind.PLAIN)
        )

        with pytest.raises(ConfigurationError):
            TentAdapter(ckpt, AdaptationConfig(), tiny_patch)

    def test_default_learning_rate(self):
        """Test the baseline's default step size."""
        assert TENT_LEARNING_RATE == 1e-3
