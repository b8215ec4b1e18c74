"""
Unit tests for dataset and prediction directories in dgtta.
"""

import numpy as np
import pytest
import yaml

from src.exceptions import DataError
from src.models.volume_models import Dataset
from src.tools.dataset_io import (
    DATASET_MANIFEST,
    load_dataset,
    load_predictions,
    save_dataset,
    save_predictions,
)
from tests.conftest import make_labeled_sample


class TestDatasetDirectory:
    """Test save_dataset and load_dataset."""

    def test_round_trip(self, tmp_path, labeled_dataset):
        """Test images, labels and tags survive a save and load."""
        save_dataset(labeled_dataset, tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")

        assert loaded.domain_tag == "A"
        assert loaded.case_ids() == ["case_000", "case_001"]
        assert loaded.is_labeled
        for a, b in zip(labeled_dataset.samples, loaded.samples):
            assert np.array_equal(a.image.data, b.image.data)
            assert np.array_equal(a.label.labels, b.label.labels)

    def test_unlabeled_cases(self, tmp_path):
        """Test cases without labels load with label None."""
        sample = make_labeled_sample().model_copy(update={"label": None})
        save_dataset(Dataset(samples=[sample], domain_tag="B"), tmp_path / "ds")
        loaded = load_dataset(tmp_path / "ds")

        assert loaded.samples[0].label is None
        assert not (tmp_path / "ds" / "labels").exists()

    def test_skip_labels(self, tmp_path, labeled_dataset):
        """Test labels can be left unread."""
        save_dataset(labeled_dataset, tmp_path / "ds")

        assert not load_dataset(tmp_path / "ds", with_labels=False).is_labeled

    def test_extra_provenance(self, tmp_path, labeled_dataset):
        """Test extra fields are stored in the manifest."""
        save_dataset(labeled_dataset, tmp_path / "ds", extra={"seed": 7})
        manifest = yaml.safe_load((tmp_path / "ds" / DATASET_MANIFEST).read_text())

        assert manifest["seed"] == 7
        assert manifest["cases"][0] == {"case_id": "case_000", "labeled": True}

    def test_missing_manifest(self, tmp_path):
        """Test a directory without a manifest is a data error."""
        with pytest.raises(DataError) as exc_info:
            load_dataset(tmp_path)

        assert exc_info.value.exit_code == 3

    def test_incomplete_manifest(self, tmp_path):
        """Test manifests need a tag and a case list."""
        (tmp_path / DATASET_MANIFEST).write_text("domain_tag: A\n")

        with pytest.raises(DataError):
            load_dataset(tmp_path)


class TestPredictionDirectory:
    """Test save_predictions and load_predictions."""

    def test_round_trip(self, tmp_path, labeled_dataset):
        """Test predictions are keyed by case id."""
        predictions = {s.case_id: s.label for s in labeled_dataset.samples}
        save_predictions(predictions, tmp_path / "pred")
        loaded = load_predictions(tmp_path / "pred")

        assert sorted(loaded) == ["case_000", "case_001"]
        assert np.array_equal(loaded["case_001"].labels, predictions["case_001"].labels)

    def test_missing_directory(self, tmp_path):
        """Test an absent prediction directory is a data error."""
        with pytest.raises(DataError):
            load_predictions(tmp_path / "absent")

    def test_empty_directory(self, tmp_path):
        """Test a directory without predictions is a data error."""
        with pytest.raises(DataError):
            load_predictions(tmp_path)
