"""
Unit tests for the consistency adapter in dgtta.

Tests the adaptation loop contract: source isolation, parameter groups,
determinism, masking and degenerate inputs.
"""

import numpy as np
import pytest
import torch

from src.adaptation.base_adapter import AdaptationResult
from src.adaptation.consistency_adapter import ConsistencyAdapter
from src.exceptions import ConfigurationError, DegenerateInputError
from src.models.config_models import AdaptationConfig, NormKind, ParamGroup, PipelineKind, SpatialConfig
from src.networks.segnet import parameter_subset
from src.training.losses import consistency_dice_loss
from src.training.patch_sampler import crop
from src.tools.spatial_augment import AffineAugmentation

STILL = SpatialConfig(max_rotation_deg=0.0, max_scale_delta=0.0, max_translation_vox=0.0)


def quick_config(**overrides) -> AdaptationConfig:
    values = dict(num_steps=2, patches_per_step=2, ensemble_size=1, learning_rate=1e-3, seed=0)
    values.update(overrides)
    return AdaptationConfig(**values)


class TestConsistencyAdapter:
    """Test ConsistencyAdapter.adapt."""

    def test_trace_has_one_entry_per_step(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test every optimizer step records its mean patch loss."""
        result = ConsistencyAdapter(plain_checkpoint, quick_config(num_steps=3), tiny_patch).adapt(
            smooth_volume(shape=(32, 32, 32))
        )

        assert isinstance(result, AdaptationResult)
        assert len(result.loss_trace) == 3
        assert all(0.0 <= loss <= 1.0 for loss in result.loss_trace)

    def test_source_model_untouched(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test adaptation works on a copy of the source model."""
        before = [p.detach().clone() for p in plain_checkpoint.model.parameters()]
        result = ConsistencyAdapter(plain_checkpoint, quick_config(), tiny_patch).adapt(smooth_volume(shape=(32, 32, 32)))

        assert result.model is not plain_checkpoint.model
        assert all(torch.equal(a, b) for a, b in zip(before, plain_checkpoint.model.parameters()))
        assert any(not torch.equal(a, b) for a, b in zip(before, result.model.parameters()))

    def test_zero_steps_returns_source_copy(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test zero steps leave the parameters as they are."""
        result = ConsistencyAdapter(plain_checkpoint, quick_config(num_steps=0), tiny_patch).adapt(
            smooth_volume(shape=(16, 16, 16))
        )

        assert result.loss_trace == []
        for a, b in zip(plain_checkpoint.model.parameters(), result.model.parameters()):
            assert torch.equal(a, b)

    @pytest.mark.parametrize("group", [ParamGroup.NORM, ParamGroup.ENCODER, ParamGroup.DECODER])
    def test_only_selected_group_changes(self, group, plain_checkpoint, smooth_volume, tiny_patch):
        """Test parameters outside the group keep their source values."""
        result = ConsistencyAdapter(plain_checkpoint, quick_config(param_group=group), tiny_patch).adapt(
            smooth_volume(shape=(32, 32, 32))
        )
        group_ids = {id(p) for p in parameter_subset(result.model, group)}
        selected = {name for name, p in result.model.named_parameters() if id(p) in group_ids}
        source = dict(plain_checkpoint.model.named_parameters())

        changed = {name for name, p in result.model.named_parameters() if not torch.equal(p, source[name])}
        assert changed
        assert changed <= selected

    def test_deterministic(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test equal seeds give identical adapted parameters and traces."""
        v = smooth_volume(shape=(32, 32, 32))
        a = ConsistencyAdapter(plain_checkpoint, quick_config(), tiny_patch).adapt(v)
        b = ConsistencyAdapter(plain_checkpoint, quick_config(), tiny_patch).adapt(v)

        assert a.loss_trace == b.loss_trace
        for pa, pb in zip(a.model.parameters(), b.model.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test the seed drives patch and branch sampling."""
        v = smooth_volume(shape=(32, 32, 32))
        a = ConsistencyAdapter(plain_checkpoint, quick_config(seed=0), tiny_patch).adapt(v)
        b = ConsistencyAdapter(plain_checkpoint, quick_config(seed=1), tiny_patch).adapt(v)

        assert a.loss_trace != b.loss_trace

    def test_still_branches_only_decay(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test identical views give zero loss so only weight decay moves the weights."""
        steps, lr, wd = 3, 1e-2, 0.1
        cfg = quick_config(num_steps=steps, learning_rate=lr, weight_decay=wd, spatial=STILL)
        # float64 keeps rounding-level gradients far below the AdamW epsilon
        plain_checkpoint.model.double()
        result = ConsistencyAdapter(plain_checkpoint, cfg, tiny_patch).adapt(smooth_volume(shape=(32, 32, 32)))

        assert result.loss_trace == pytest.approx([0.0] * steps, abs=1e-6)
        factor = (1.0 - lr * wd) ** steps
        for p0, p in zip(plain_checkpoint.model.parameters(), result.model.parameters()):
            assert torch.allclose(p, p0 * factor, atol=1e-6)

    def test_out_of_field_views_are_degenerate(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test a step without any valid voxel raises with the step number."""
        cfg = quick_config(spatial=SpatialConfig(max_translation_vox=1000.0))

        with pytest.raises(DegenerateInputError) as exc_info:
            ConsistencyAdapter(plain_checkpoint, cfg, tiny_patch).adapt(smooth_volume(shape=(32, 32, 32)))

        assert exc_info.value.step == 1

    def test_invalid_class_subset(self, plain_checkpoint, tiny_patch):
        """Test classes beyond the model outputs are a configuration error."""
        with pytest.raises(ConfigurationError):
            ConsistencyAdapter(plain_checkpoint, quick_config(class_subset=[1, 5]), tiny_patch)

    def test_intensity_augmented_branches(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test GIN inside both branches still adapts with finite losses."""
        result = ConsistencyAdapter(
            plain_checkpoint, quick_config(intensity_augmentation=True, spatial=STILL), tiny_patch
        ).adapt(smooth_volume(shape=(16, 16, 16)))

        assert all(np.isfinite(result.loss_trace))
        assert result.loss_trace[0] > 0.0

    def test_intensity_augmented_input_uses_whole_volume_descriptor(
        self, checkpoint_factory, smooth_volume, tiny_patch
    ):
        """Test augmented descriptor patches equal a crop of the whole-volume descriptor."""
        ckpt = checkpoint_factory(pipeline=PipelineKind.SSC)
        adapter = ConsistencyAdapter(ckpt, quick_config(intensity_augmentation=True), tiny_patch)
        target = adapter.prepare_target(smooth_volume(shape=(32, 32, 32)))
        origin = (8, 16, 0)

        x = adapter.branch_input(ckpt.model, target, origin, np.random.default_rng(5))
        whole = adapter.pipeline.augmented(target.normalized, np.random.default_rng(5))
        expected = crop(whole.as_channels(), origin, tiny_patch.patch_size)

        assert x.shape == (1, 12, 16, 16, 16)
        assert np.allclose(x[0].numpy(), expected, atol=1e-6)

    def test_batch_norm_model_uses_batch_statistics(self, checkpoint_factory, smooth_volume, tiny_patch):
        """Test batch-norm models are adapted in batch-statistics mode."""
        ckpt = checkpoint_factory(norm_kind=NormKind.BATCH)
        result = ConsistencyAdapter(ckpt, quick_config(num_steps=1), tiny_patch).adapt(smooth_volume(shape=(32, 32, 32)))
        adapted = result.to_checkpoint(ckpt, quick_config(num_steps=1))

        assert result.batch_statistics
        assert adapted.manifest.batch_statistics
        assert adapted.manifest.adaptation["num_steps"] == 1
        assert adapted.manifest.seeds["adaptation"] == 0


class TestBranchPrediction:
    """Test the per-view prediction path."""

    def test_class_subset_freezes_other_head_channels(self, plain_checkpoint, tiny_patch):
        """Test head rows of classes outside the subset get zero gradient."""
        adapter = ConsistencyAdapter(plain_checkpoint, quick_config(class_subset=[1]), tiny_patch)
        model = plain_checkpoint.model
        x = torch.randn(1, 1, 16, 16, 16, generator=torch.Generator().manual_seed(3))
        y_a, valid_a = adapter.branch_prediction(model, x, AffineAugmentation.translation((1.0, 0.0, 0.0)))
        y_b, valid_b = adapter.branch_prediction(model, x, AffineAugmentation.identity())
        consistency_dice_loss(y_a, y_b, valid_a & valid_b, classes=[1]).backward()

        grad = model.head.weight.grad
        outside = [c for c in range(grad.shape[0]) if c != 1]
        assert torch.all(grad[outside] == 0)
        assert torch.all(model.head.bias.grad[outside] == 0)
        assert grad[1].abs().sum() > 0

    def test_identity_view_matches_direct_prediction(self, plain_checkpoint, tiny_patch):
        """Test an identity transform reproduces the plain softmax."""
        adapter = ConsistencyAdapter(plain_checkpoint, quick_config(), tiny_patch)
        x = torch.randn(1, 1, 16, 16, 16)
        with torch.no_grad():
            probs, valid = adapter.branch_prediction(plain_checkpoint.model, x, AffineAugmentation.identity())
            direct = plain_checkpoint.model.probabilities(x)

        assert bool(valid.all())
        assert torch.allclose(probs, direct, atol=1e-5)

    def test_shifted_view_masks_uncovered_voxels(self, plain_checkpoint, tiny_patch):
        """Test voxels that left the view are invalid and hold the sentinel."""
        adapter = ConsistencyAdapter(plain_checkpoint, quick_config(), tiny_patch)
        x = torch.randn(1, 1, 16, 16, 16)
        with torch.no_grad():
            probs, valid = adapter.branch_prediction(
                plain_checkpoint.model, x, AffineAugmentation.translation((4.0, 0.0, 0.0))
            )

        assert not valid[..., 12:, :, :].any()
        assert bool(valid[..., :12, :, :].all())
        assert torch.all(probs[:, :, 12:] == -1.0)
