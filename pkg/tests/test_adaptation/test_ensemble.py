"""
Unit tests for prediction and TTA ensembles in dgtta.
"""

import numpy as np
import pytest
import torch

from src.adaptation.consistency_adapter import ConsistencyAdapter
from src.adaptation.ensemble import TTAEnsemble, ensemble_predict, predict, predict_probabilities
from src.exceptions import ConfigurationError, InvalidArgumentError
from src.models.config_models import AdaptationConfig, PipelineKind


class CountingAdapter(ConsistencyAdapter):
    """Consistency adapter that counts patch losses per instance."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.patch_calls = 0

    def patch_loss(self, model, target, origin, rng):
        self.patch_calls += 1
        return super().patch_loss(model, target, origin, rng)


class TestEnsemblePredict:
    """Test predict and ensemble_predict."""

    def test_single_model_prediction(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test one-model prediction is the argmax of its probabilities."""
        v = smooth_volume(shape=(32, 32, 32))
        labels = predict(plain_checkpoint, v, tiny_patch)
        probs = predict_probabilities(plain_checkpoint, v, tiny_patch)

        assert labels.num_classes == 3
        assert labels.spacing == v.spacing
        assert np.array_equal(labels.labels, np.argmax(probs.data, axis=0))

    def test_identical_members_match_single_model(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test averaging copies of one model changes nothing."""
        v = smooth_volume(shape=(32, 32, 32))

        assert np.array_equal(
            ensemble_predict([plain_checkpoint] * 3, v, tiny_patch).labels, predict(plain_checkpoint, v, tiny_patch).labels
        )

    def test_averages_softmax(self, checkpoint_factory, smooth_volume, tiny_patch):
        """Test the ensemble takes the argmax of the mean probabilities."""
        members = [checkpoint_factory(seed=s) for s in range(3)]
        v = smooth_volume(shape=(16, 16, 16))
        mean = sum(predict_probabilities(m, v, tiny_patch).data.astype(np.float64) for m in members) / 3

        assert np.array_equal(ensemble_predict(members, v, tiny_patch).labels, np.argmax(mean, axis=0))

    def test_empty_ensemble(self, smooth_volume, tiny_patch):
        """Test an ensemble needs members."""
        with pytest.raises(InvalidArgumentError):
            ensemble_predict([], smooth_volume(shape=(16, 16, 16)), tiny_patch)

    def test_pipeline_mismatch(self, checkpoint_factory, smooth_volume, tiny_patch):
        """Test members with different input pipelines are rejected."""
        members = [checkpoint_factory(PipelineKind.PLAIN), checkpoint_factory(PipelineKind.SSC)]

        with pytest.raises(ConfigurationError):
            ensemble_predict(members, smooth_volume(shape=(16, 16, 16)), tiny_patch)

    def test_gin_and_plain_share_inference(self, checkpoint_factory, smooth_volume, tiny_patch):
        """Test GIN only differs at training time, so such members combine."""
        members = [checkpoint_factory(PipelineKind.GIN), checkpoint_factory(PipelineKind.GIN, seed=1)]

        assert ensemble_predict(members, smooth_volume(shape=(16, 16, 16)), tiny_patch).num_classes == 3


class TestTTAEnsemble:
    """Test TTAEnsemble."""

    def test_member_seeds(self, plain_checkpoint, tiny_patch):
        """Test member i adapts with seed + i."""
        ensemble = TTAEnsemble(plain_checkpoint, AdaptationConfig(ensemble_size=3, seed=5), tiny_patch)

        assert [a.cfg.seed for a in ensemble.adapters] == [5, 6, 7]

    def test_defaults_drive_schedule(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test an unmodified config runs 12 steps of 16 patches on 3 members."""
        ensemble = TTAEnsemble(plain_checkpoint, AdaptationConfig(), tiny_patch, adapter_cls=CountingAdapter)
        members = ensemble.adapt(smooth_volume(shape=(32, 32, 32)))

        assert len(members) == 3
        assert [len(t) for t in ensemble.loss_traces] == [12, 12, 12]
        assert [a.patch_calls for a in ensemble.adapters] == [12 * 16] * 3

    def test_members_differ(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test differently seeded members end in different parameters."""
        cfg = AdaptationConfig(num_steps=1, patches_per_step=2, ensemble_size=2, learning_rate=1e-3)
        members = TTAEnsemble(plain_checkpoint, cfg, tiny_patch).adapt(smooth_volume(shape=(32, 32, 32)))

        assert not torch.equal(members[0].model.head.weight, members[1].model.head.weight)
        assert [m.manifest.seeds["adaptation"] for m in members] == [0, 1]

    def test_threaded_matches_serial(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test adapting members in threads gives the same members."""
        cfg = AdaptationConfig(num_steps=1, patches_per_step=2, ensemble_size=2, learning_rate=1e-3)
        v = smooth_volume(shape=(32, 32, 32))
        serial = TTAEnsemble(plain_checkpoint, cfg, tiny_patch).adapt(v)
        threaded = TTAEnsemble(plain_checkpoint, cfg, tiny_patch).adapt(v, workers=2)

        for a, b in zip(serial, threaded):
            assert torch.equal(a.model.head.weight, b.model.head.weight)

    def test_predict_adapts_first(self, plain_checkpoint, smooth_volume, tiny_patch):
        """Test predicting without adapting runs adaptation."""
        cfg = AdaptationConfig(num_steps=1, patches_per_step=1, ensemble_size=1)
        ensemble = TTAEnsemble(plain_checkpoint, cfg, tiny_patch)
        labels = ensemble.predict(smooth_volume(shape=(32, 32, 32)))

        assert ensemble.results
        assert labels.spatial_shape == (32, 32, 32)
