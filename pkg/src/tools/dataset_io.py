"""
Dataset directory IO.

Layout of a dataset directory:
    dataset.yaml            domain tag, case ids, extra provenance
    images/<case>.bin/.meta
    labels/<case>.bin/.meta (labeled cases only)

A prediction directory holds one `<case>.bin/.meta` label map per case.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from ..exceptions import DataError
from ..models.volume_models import Dataset, LabelMap, Sample
from .volume_io import PathLike, load_label_map, load_volume, save_label_map, save_volume

logger = logging.getLogger(__name__)

DATASET_MANIFEST = "dataset.yaml"


def save_dataset(dataset: Dataset, directory: PathLike, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write images, labels and a manifest; returns the directory."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    cases = []
    for sample in dataset.samples:
        save_volume(sample.image, root / "images" / f"{sample.case_id}.bin")
        if sample.label is not None:
            save_label_map(sample.label, root / "labels" / f"{sample.case_id}.bin")
        cases.append({"case_id": sample.case_id, "labeled": sample.label is not None})
    manifest = {"domain_tag": dataset.domain_tag, "cases": cases}
    if extra:
        manifest.update(extra)
    (root / DATASET_MANIFEST).write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    logger.info(f"Saved {len(dataset)} cases of domain '{dataset.domain_tag}' to {root}")
    return root


def load_dataset(directory: PathLike, with_labels: bool = True) -> Dataset:
    """Read a dataset directory written by save_dataset."""
    root = Path(directory)
    manifest_path = root / DATASET_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"No {DATASET_MANIFEST} in {root}")
    manifest = yaml.safe_load(manifest_path.read_text(encoding="utf-8")) or {}
    if "domain_tag" not in manifest or "cases" not in manifest:
        raise DataError(f"{manifest_path} must list 'domain_tag' and 'cases'")
    samples = []
    for case in manifest["cases"]:
        cid = case["case_id"]
        image = load_volume(root / "images" / f"{cid}.bin")
        label = None
        if with_labels and case.get("labeled"):
            label = load_label_map(root / "labels" / f"{cid}.bin")
        samples.append(Sample(case_id=cid, image=image, label=label))
    return Dataset(samples=samples, domain_tag=str(manifest["domain_tag"]))


def save_predictions(predictions: Dict[str, LabelMap], directory: PathLike) -> Path:
    """Write one `<case>.bin` label map per predicted case."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for cid, label in predictions.items():
        save_label_map(label, root / f"{cid}.bin")
    logger.debug(f"Saved {len(predictions)} predictions to {root}")
    return root


def load_predictions(directory: PathLike, num_classes: Optional[int] = None) -> Dict[str, LabelMap]:
    """Read every `<case>.bin` label map of a prediction directory."""
    root = Path(directory)
    if not root.is_dir():
        raise DataError(f"Prediction directory not found: {root}")
    predictions = {
        path.stem: load_label_map(path, num_classes=num_classes) for path in sorted(root.glob("*.bin"))
    }
    if not predictions:
        raise DataError(f"No predictions in {root}")
    return predictions
