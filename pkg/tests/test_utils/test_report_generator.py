"""
Unit tests for scoring and report generation in dgtta.

Tests evaluation of predictions, summary statistics and the written
report directory.
"""

import math

import numpy as np
import pandas as pd
import pytest

from src.exceptions import DataError
from src.models.report_models import ScoreRow, ScoreTable
from src.models.volume_models import LabelMap
from src.utils.report_generator import ReportGenerator, evaluate, per_case_mean_dice, row_key, summarize


def score_table(num_cases: int = 6, gain: float = 0.1) -> ScoreTable:
    """Two stages of one method, the adapted stage better on every case."""
    rng = np.random.default_rng(0)
    rows = []
    for i in range(num_cases):
        for class_id in (1, 2):
            base = float(rng.uniform(0.3, 0.6))
            rows.append(ScoreRow(case_id=f"case_{i:03d}", method="plain", stage="BS", class_id=class_id, dice=base, hd95=10.0 + i))
            rows.append(
                ScoreRow(
                    case_id=f"case_{i:03d}",
                    method="plain",
                    stage="+A",
                    class_id=class_id,
                    dice=base + gain + 0.01 * i,
                    hd95=5.0 + i,
                )
            )
    return ScoreTable(rows=rows)


class TestEvaluate:
    """Test evaluate."""

    def test_perfect_predictions(self, labeled_dataset):
        """Test references scored against themselves."""
        predictions = {s.case_id: s.label for s in labeled_dataset.samples}
        table = evaluate(predictions, labeled_dataset, "plain", "BS")
        frame = table.to_dataframe()

        assert len(frame) == 2 * 2
        assert (frame["dice"] == 1.0).all()
        assert (frame["hd95"] == 0.0).all()
        assert set(frame["class_id"]) == {1, 2}

    def test_absent_class_has_no_distance(self, labeled_dataset):
        """Test a missing predicted class gives Dice 0 and an empty HD95."""
        sample = labeled_dataset.samples[0]
        labels = sample.label.labels.copy()
        labels[labels == 2] = 0
        prediction = LabelMap(labels=labels, num_classes=3, spacing=sample.label.spacing)
        frame = evaluate({sample.case_id: prediction}, labeled_dataset, "plain", "BS", classes=[2]).to_dataframe()

        assert frame["dice"].tolist() == [0.0]
        assert math.isnan(frame["hd95"].iloc[0])

    def test_missing_reference(self, labeled_dataset):
        """Test predictions without a reference case are a data error."""
        predictions = {"case_999": labeled_dataset.samples[0].label}

        with pytest.raises(DataError):
            evaluate(predictions, labeled_dataset, "plain", "BS")


class TestSummarize:
    """Test summarize."""

    def test_rows_and_means(self):
        """Test one summary row per method and stage with overall means."""
        table = score_table()
        summary = summarize(table)
        frame = table.to_dataframe()

        assert sorted(summary["row"]) == ["plain/+A", "plain/BS"]
        bs = summary[summary["row"] == "plain/BS"].iloc[0]
        assert bs["dice_mean"] == pytest.approx(frame[frame["stage"] == "BS"]["dice"].mean())
        assert bs["n_cases"] == 6
        assert "dice_c1_mean" in summary.columns and "hd95_c2_std" in summary.columns

    def test_mean_rank(self):
        """Test the better stage ranks first on both metrics."""
        summary = summarize(score_table()).set_index("row")

        assert summary.loc["plain/+A", "mean_rank"] == 1.0
        assert summary.loc["plain/BS", "mean_rank"] == 2.0

    def test_significance_against_reference(self):
        """Test a consistent improvement over six cases is significant."""
        summary = summarize(score_table(), reference="plain/BS").set_index("row")

        assert summary.loc["plain/+A", "p_value"] == pytest.approx(1 / 64)
        assert summary.loc["plain/+A", "significance"] == "*"
        assert math.isnan(summary.loc["plain/BS", "p_value"])

    def test_too_few_cases_skips_test(self):
        """Test fewer than five paired cases leave the p-value empty."""
        summary = summarize(score_table(num_cases=3), reference="plain/BS").set_index("row")

        assert math.isnan(summary.loc["plain/+A", "p_value"])
        assert summary.loc["plain/+A", "significance"] == ""

    def test_unknown_reference(self):
        """Test a reference row absent from the scores is a data error."""
        with pytest.raises(DataError):
            summarize(score_table(), reference="gin_ssc/BS")

    def test_empty_table(self):
        """Test an empty table summarizes to an empty frame."""
        assert summarize(ScoreTable()).empty

    def test_per_case_matrix(self):
        """Test the per-case matrix has one column per row key."""
        matrix = per_case_mean_dice(score_table().to_dataframe())

        assert list(matrix.columns) == sorted([row_key("plain", "+A"), row_key("plain", "BS")])
        assert len(matrix) == 6


class TestReportGenerator:
    """Test ReportGenerator."""

    def test_writes_report_directory(self, tmp_path):
        """Test tables, figures and markdown are written."""
        out = ReportGenerator().generate(score_table(), tmp_path / "report", reference="plain/BS")

        for name in ("scores.csv", "summary.csv", "report.md", "boxplot_dice_BS.png", "boxplot_hd95_plusA.png"):
            assert (out / name).exists()
        text = (out / "report.md").read_text(encoding="utf-8")
        assert "| plain | +A |" in text
        assert "`plain/BS`" in text
        assert "![boxplot_dice_BS.png](boxplot_dice_BS.png)" in text

    def test_scores_csv_round_trip(self, tmp_path):
        """Test the written scores reload to the same table."""
        table = score_table()
        out = ReportGenerator().generate(table, tmp_path / "report")

        assert len(ScoreTable.from_csv(str(out / "scores.csv")).rows) == len(table.rows)
        assert len(pd.read_csv(out / "summary.csv")) == 2

    def test_svg_and_traces(self, tmp_path):
        """Test SVG output and the loss trace figure."""
        out = ReportGenerator().generate(
            score_table(), tmp_path / "report", traces={"plain/+A": [0.4, 0.3, 0.25]}, figure_format="svg"
        )

        assert (out / "loss_traces.svg").exists()
        assert (out / "boxplot_dice_BS.svg").exists()
        assert "loss_traces.svg" in (out / "report.md").read_text(encoding="utf-8")
