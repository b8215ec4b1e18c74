"""
Visualization utilities for dgtta.

Contains matplotlib figure builders for score distributions and adaptation
loss traces. Figures are rendered with the non-interactive Agg backend and
written to PNG or SVG files.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

logger = logging.getLogger(__name__)

METRIC_LABELS = {"dice": "Dice", "hd95": "HD95 [mm]"}


def create_score_boxplot(frame: pd.DataFrame, stage: str, metric: str = "dice") -> Figure:
    """
    Box plot of one metric per method and class for one stage.

    Args:
        frame: Long-format score frame (case_id, method, stage, class_id, dice, hd95)
        stage: Stage to plot (e.g. "BS" or "+A")
        metric: "dice" or "hd95"

    Returns:
        Matplotlib figure (caller saves or closes it)
    """
    subset = frame[frame["stage"] == stage]
    methods = sorted(subset["method"].unique())
    classes = sorted(subset["class_id"].unique())

    fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(methods) * len(classes)), 5))
    data: List[Sequence[float]] = []
    labels: List[str] = []
    for method in methods:
        for class_id in classes:
            values = subset[(subset["method"] == method) & (subset["class_id"] == class_id)][metric]
            data.append(values.dropna().to_numpy())
            labels.append(f"{method}\nc{class_id}")
    if data:
        ax.boxplot(data, showmeans=True)
        ax.set_xticks(range(1, len(labels) + 1))
        ax.set_xticklabels(labels, fontsize=8)

    ax.set_ylabel(METRIC_LABELS.get(metric, metric), fontsize=11, fontweight="bold")
    ax.set_title(f"{METRIC_LABELS.get(metric, metric)} per class, stage {stage}", fontsize=12, fontweight="bold")
    if metric == "dice":
        ax.set_ylim(0, 1)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return fig


def create_loss_trace_plot(traces: Dict[str, List[float]], title: str = "Adaptation loss") -> Figure:
    """Line plot of one loss trace per named run."""
    fig, ax = plt.subplots(figsize=(8, 5))
    for name, trace in traces.items():
        ax.plot(range(1, len(trace) + 1), trace, marker="o", label=name)
    ax.set_xlabel("Step", fontsize=11, fontweight="bold")
    ax.set_ylabel("Loss", fontsize=11, fontweight="bold")
    ax.set_title(title, fontsize=12, fontweight="bold")
    ax.grid(True, alpha=0.3)
    if traces:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path: Union[str, Path]) -> Path:
    """Write a figure (format from the suffix) and release it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, bbox_inches="tight", dpi=150)
    finally:
        plt.close(fig)
    logger.debug(f"Saved figure {path}")
    return path
