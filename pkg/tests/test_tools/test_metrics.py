"""
Unit tests for segmentation metrics in dgtta.

Tests Dice overlap, surface extraction and HD95 against an all-pairs
reference computation.
"""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from src.exceptions import InvalidArgumentError
from src.models.volume_models import LabelMap
from src.tools.metrics import dice_from_masks, dice_score, hd95, hd95_from_masks, surface_voxels

NEIGHBOURS = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]


def brute_force_surface(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    out = np.zeros_like(mask)
    for z, y, x in np.argwhere(mask):
        out[z, y, x] = any(not padded[z + 1 + dz, y + 1 + dy, x + 1 + dx] for dz, dy, dx in NEIGHBOURS)
    return out


def brute_force_hd95(p: np.ndarray, r: np.ndarray, spacing) -> float:
    sp = np.argwhere(brute_force_surface(p)) * np.asarray(spacing)
    sr = np.argwhere(brute_force_surface(r)) * np.asarray(spacing)
    d = cdist(sp, sr)
    return float(np.percentile(np.concatenate([d.min(axis=1), d.min(axis=0)]), 95))


def label_map(labels: np.ndarray, num_classes: int = 3, spacing=(1.0, 1.0, 1.0)) -> LabelMap:
    return LabelMap(labels=labels.astype(np.int64), num_classes=num_classes, spacing=spacing)


class TestDice:
    """Test Dice overlap."""

    def test_identical_masks(self):
        """Test identical non-empty masks score one."""
        m = np.zeros((4, 4, 4), dtype=bool)
        m[1:3, 1:3, 1:3] = True

        assert dice_from_masks(m, m) == 1.0

    def test_disjoint_masks(self):
        """Test disjoint masks score zero."""
        a = np.zeros((4, 4, 4), dtype=bool)
        b = np.zeros((4, 4, 4), dtype=bool)
        a[0] = True
        b[3] = True

        assert dice_from_masks(a, b) == 0.0

    def test_both_empty(self):
        """Test two empty masks agree perfectly."""
        empty = np.zeros((3, 3, 3), dtype=bool)

        assert dice_from_masks(empty, empty) == 1.0

    def test_partial_overlap(self):
        """Test 2|P n R| / (|P| + |R|) on a half overlap."""
        a = np.zeros((4, 4, 4), dtype=bool)
        b = np.zeros((4, 4, 4), dtype=bool)
        a[:2] = True
        b[1:3] = True

        assert dice_from_masks(a, b) == pytest.approx(0.5)

    def test_per_class(self, labeled_sample):
        """Test class-wise Dice on label maps."""
        ref = labeled_sample.label
        pred_labels = ref.labels.copy()
        pred_labels[pred_labels == 2] = 0

        pred = label_map(pred_labels)
        assert dice_score(pred, ref, 1) == 1.0
        assert dice_score(pred, ref, 2) == 0.0

    def test_geometry_mismatch(self):
        """Test label maps of different shapes are rejected."""
        with pytest.raises(InvalidArgumentError):
            dice_score(label_map(np.zeros((4, 4, 4))), label_map(np.zeros((4, 4, 5))), 1)


class TestSurface:
    """Test surface voxel extraction."""

    def test_cube_surface(self):
        """Test a solid cube keeps only its shell."""
        m = np.zeros((7, 7, 7), dtype=bool)
        m[1:6, 1:6, 1:6] = True
        s = surface_voxels(m)

        assert s.sum() == 5**3 - 3**3
        assert not s[3, 3, 3]

    def test_grid_border_counts_as_outside(self):
        """Test a full grid has its boundary as surface."""
        s = surface_voxels(np.ones((4, 4, 4), dtype=bool))

        assert s.sum() == 4**3 - 2**3

    def test_matches_brute_force(self):
        """Test surface extraction on random masks."""
        rng = np.random.default_rng(0)
        for _ in range(10):
            m = rng.random((6, 7, 5)) > 0.5

            assert np.array_equal(surface_voxels(m), brute_force_surface(m))


class TestHD95:
    """Test the 95th percentile Hausdorff distance."""

    def test_matches_all_pairs_reference(self):
        """Test 30 random mask pairs against the all-pairs computation."""
        rng = np.random.default_rng(0)
        for _ in range(30):
            shape = tuple(int(n) for n in rng.integers(4, 13, size=3))
            spacing = tuple(float(s) for s in rng.uniform(0.5, 2.0, size=3))
            p = rng.random(shape) > 0.7
            r = rng.random(shape) > 0.7
            p[0, 0, 0] = r[-1, -1, -1] = True
            result = hd95_from_masks(p, r, spacing)

            assert result.value == pytest.approx(brute_force_hd95(p, r, spacing), abs=1e-9)

    def test_identical_masks(self):
        """Test identical masks are zero distance apart."""
        m = np.zeros((6, 6, 6), dtype=bool)
        m[1:4, 1:4, 1:4] = True

        assert hd95_from_masks(m, m, (1.0, 1.0, 1.0)).value == 0.0

    def test_shifted_cube_in_mm(self):
        """Test distances are measured in millimetres."""
        a = np.zeros((12, 12, 12), dtype=bool)
        b = np.zeros((12, 12, 12), dtype=bool)
        a[2:6, 2:6, 2:6] = True
        b[5:9, 2:6, 2:6] = True

        assert hd95_from_masks(a, b, (2.0, 1.0, 1.0)).value == pytest.approx(6.0)

    @pytest.mark.parametrize(
        "p_filled, r_filled, reason",
        [
            (False, True, "class absent from prediction"),
            (True, False, "class absent from reference"),
            (False, False, "class absent from prediction and reference"),
        ],
    )
    def test_absent_class_reason(self, p_filled, r_filled, reason):
        """Test empty sets give no distance and a reason."""
        p = np.zeros((4, 4, 4), dtype=bool)
        r = np.zeros((4, 4, 4), dtype=bool)
        p[1, 1, 1] = p_filled
        r[2, 2, 2] = r_filled
        result = hd95_from_masks(p, r, (1.0, 1.0, 1.0))

        assert result.value is None
        assert result.reason == reason

    def test_max_directed_variant(self):
        """Test the directed variant is never below the pooled one on an asymmetric pair."""
        a = np.zeros((16, 16, 16), dtype=bool)
        b = np.zeros((16, 16, 16), dtype=bool)
        a[2:12, 2:12, 2:12] = True
        b[2:6, 2:6, 2:6] = True
        pooled = hd95_from_masks(a, b, (1.0, 1.0, 1.0), "pooled").value
        directed = hd95_from_masks(a, b, (1.0, 1.0, 1.0), "max_directed").value

        assert directed >= pooled > 0

    def test_label_map_uses_reference_spacing(self):
        """Test hd95 on label maps defaults to the reference spacing."""
        a = np.zeros((8, 8, 8))
        b = np.zeros((8, 8, 8))
        a[1:3, 1:3, 1:3] = 1
        b[4:6, 1:3, 1:3] = 1

        result = hd95(label_map(a, spacing=(3.0, 1.0, 1.0)), label_map(b, spacing=(3.0, 1.0, 1.0)), 1)
        assert result.value == pytest.approx(9.0)
