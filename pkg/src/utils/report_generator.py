"""
Report generation utilities for dgtta.

Contains tools for scoring predictions into a ScoreTable, summarizing it
per method and stage (mean +- std, mean rank, significance against a
reference row), and exporting CSV tables, box-plot figures and a markdown
report rendered with Jinja2.
"""

import logging
import math
import os
import re
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader

from ..exceptions import DataError, InsufficientDataError
from ..models.report_models import ScoreRow, ScoreTable
from ..models.volume_models import Dataset, LabelMap
from ..tools.metrics import HD95Variant, dice_score, hd95
from ..tools.statistics import significance_stars, wilcoxon_one_sided
from .visualization import create_loss_trace_plot, create_score_boxplot, save_figure

logger = logging.getLogger(__name__)

REPORT_TEMPLATE = "report.md.j2"


def row_key(method: str, stage: str) -> str:
    """Display key of a (method, stage) row, e.g. "gin_ssc/+A"."""
    return f"{method}/{stage}"


def score_case(
    pred: LabelMap,
    ref: LabelMap,
    case_id: str,
    method: str,
    stage: str,
    classes: Sequence[int],
    variant: HD95Variant = "pooled",
) -> List[ScoreRow]:
    """Dice and HD95 rows of one case."""
    rows = []
    for class_id in classes:
        distance = hd95(pred, ref, class_id, variant=variant)
        if not distance.is_defined:
            logger.debug(f"{case_id} class {class_id}: HD95 undefined ({distance.reason})")
        rows.append(
            ScoreRow(
                case_id=case_id,
                method=method,
                stage=stage,
                class_id=class_id,
                dice=dice_score(pred, ref, class_id),
                hd95=distance.value,
            )
        )
    return rows


def evaluate(
    predictions: Mapping[str, LabelMap],
    references: Dataset,
    method: str,
    stage: str,
    classes: Optional[Sequence[int]] = None,
    variant: HD95Variant = "pooled",
) -> ScoreTable:
    """
    Score predictions against a labeled dataset.

    Args:
        predictions: Predicted label maps by case id
        references: Labeled dataset holding every predicted case
        method: Method name written into every row
        stage: Stage name (BS, +A, ...)
        classes: Classes to score (all foreground classes by default)
        variant: HD95 percentile variant

    Returns:
        ScoreTable with one row per (case, class)
    """
    refs = {s.case_id: s.label for s in references.samples if s.label is not None}
    missing = sorted(set(predictions) - set(refs))
    if missing:
        raise DataError(f"No reference labels for cases {missing}")
    num_classes = references.num_classes or 0
    classes = list(classes) if classes is not None else list(range(1, num_classes))

    table = ScoreTable()
    for case_id in sorted(predictions):
        ref = refs[case_id]
        assert ref is not None
        table.extend(score_case(predictions[case_id], ref, case_id, method, stage, classes, variant))
    logger.info(f"Scored {len(predictions)} cases for {row_key(method, stage)}")
    return table


def per_case_mean_dice(frame: pd.DataFrame) -> pd.DataFrame:
    """Case x (method, stage) matrix of Dice averaged over classes."""
    means = frame.groupby(["method", "stage", "case_id"])["dice"].mean().reset_index()
    means["row"] = [row_key(m, s) for m, s in zip(means["method"], means["stage"])]
    return means.pivot(index="case_id", columns="row", values="dice")


def summarize(table: Union[ScoreTable, pd.DataFrame], reference: Optional[str] = None) -> pd.DataFrame:
    """
    One summary row per (method, stage).

    Columns: per-class Dice/HD95 mean and std, overall Dice/HD95 mean and
    std over per-case class means, mean rank across the two overall means
    (Dice descending, HD95 ascending), and, when a reference row key is
    given, the one-sided Wilcoxon p-value of "row > reference" on per-case
    mean Dice with its significance stars.
    """
    frame = table.to_dataframe() if isinstance(table, ScoreTable) else table
    if frame.empty:
        return pd.DataFrame()

    records: List[Dict[str, object]] = []
    for (method, stage), group in frame.groupby(["method", "stage"], sort=True):
        rec: Dict[str, object] = {"method": method, "stage": stage, "row": row_key(method, stage)}
        for class_id, cls in group.groupby("class_id"):
            rec[f"dice_c{class_id}_mean"] = cls["dice"].mean()
            rec[f"dice_c{class_id}_std"] = cls["dice"].std(ddof=0)
            rec[f"hd95_c{class_id}_mean"] = cls["hd95"].mean()
            rec[f"hd95_c{class_id}_std"] = cls["hd95"].std(ddof=0)
        case_means = group.groupby("case_id")[["dice", "hd95"]].mean()
        rec["dice_mean"] = case_means["dice"].mean()
        rec["dice_std"] = case_means["dice"].std(ddof=0)
        rec["hd95_mean"] = case_means["hd95"].mean()
        rec["hd95_std"] = case_means["hd95"].std(ddof=0)
        rec["n_cases"] = len(case_means)
        records.append(rec)
    summary = pd.DataFrame(records)

    dice_rank = summary["dice_mean"].rank(ascending=False, method="average")
    hd_rank = summary["hd95_mean"].rank(ascending=True, method="average")
    summary["mean_rank"] = pd.concat([dice_rank, hd_rank], axis=1).mean(axis=1, skipna=True)

    summary["p_value"] = math.nan
    summary["significance"] = ""
    if reference is not None:
        matrix = per_case_mean_dice(frame)
        if reference not in matrix.columns:
            raise DataError(f"Reference row '{reference}' not found in scores")
        for i, row in summary.iterrows():
            if row["row"] == reference:
                continue
            paired = matrix[[row["row"], reference]].dropna()
            try:
                p = wilcoxon_one_sided(paired[row["row"]].to_numpy(), paired[reference].to_numpy())
            except InsufficientDataError as e:
                logger.warning(f"No significance for {row['row']} vs {reference}: {e}")
                continue
            summary.at[i, "p_value"] = p
            summary.at[i, "significance"] = significance_stars(p).value
    return summary


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text.replace("+", "plus")).strip("_")


def _pm(mean: float, std: float, digits: int = 3) -> str:
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "n/a"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


class ReportGenerator:
    """
    Writes score tables, figures and a markdown summary into a directory.

    Everything in the report is recomputed from the score CSV.
    """

    def __init__(self, template_dir: Optional[str] = None):
        """
        Initialize the report generator.

        Args:
            template_dir: Directory containing Jinja2 templates
        """
        self.template_dir = template_dir or os.path.join(os.path.dirname(__file__), "templates")
        self.jinja_env = Environment(
            loader=FileSystemLoader(self.template_dir), autoescape=False, trim_blocks=True
        )
        self.jinja_env.filters["pm"] = _pm
        self.jinja_env.filters["pvalue"] = lambda p: "" if p is None or np.isnan(p) else f"{p:.4g}"
        logger.debug(f"ReportGenerator initialized with template_dir: {self.template_dir}")

    def generate(
        self,
        table: ScoreTable,
        out_dir: Union[str, Path],
        reference: Optional[str] = None,
        traces: Optional[Dict[str, List[float]]] = None,
        figure_format: str = "png",
    ) -> Path:
        """
        Write scores.csv, summary.csv, box plots and report.md.

        Args:
            table: Per-case per-class scores
            out_dir: Report directory (created)
            reference: Row key ("method/stage") significance is tested against
            traces: Optional adaptation loss traces to plot
            figure_format: "png" or "svg"

        Returns:
            The report directory
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        frame = table.to_dataframe()
        table.to_csv(str(out / "scores.csv"))
        summary = summarize(frame, reference)
        summary.to_csv(out / "summary.csv", index=False, float_format="%.6f")

        figures: List[str] = []
        for stage in sorted(frame["stage"].unique()):
            for metric in ("dice", "hd95"):
                path = out / f"boxplot_{metric}_{_slug(stage)}.{figure_format}"
                save_figure(create_score_boxplot(frame, stage, metric), path)
                figures.append(path.name)
        if traces:
            path = out / f"loss_traces.{figure_format}"
            save_figure(create_loss_trace_plot(traces), path)
            figures.append(path.name)

        classes = sorted(int(c) for c in frame["class_id"].unique()) if not frame.empty else []
        template = self.jinja_env.get_template(REPORT_TEMPLATE)
        text = template.render(
            summary=summary.to_dict(orient="records"),
            classes=classes,
            reference=reference,
            figures=figures,
            generated_at=datetime.now(),
        )
        (out / "report.md").write_text(text, encoding="utf-8")
        logger.info(f"Report written to {out}")
        return out
