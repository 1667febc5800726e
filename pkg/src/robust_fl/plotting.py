"""
plotting.py
Date: 18/10/2026
--------------------------------------------------------#
Description: Accuracy-vs-round figures for one or more runs.

Inputs: metrics CSVs written by harness.write_metrics
Outputs: one image (png, pdf or svg, picked from the file suffix)
--------------------------------------------------------#
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import read_metrics  # noqa: E402

logger = logging.getLogger(__name__)


def accuracy_figure(width: float = 8, height: Optional[float] = None):
    """
    Blank figure with readable font sizes.

    Args:
        width: width in inches.
        height: height in inches. Defaults to width * golden ratio.

    Returns:
        (figure, axes)
    """
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    ax.set_xlabel("Round", fontsize=width * 2)
    ax.set_ylabel("Test accuracy", fontsize=width * 2)
    ax.tick_params(labelsize=width * 1.5)
    return fig, ax


def _run_label(csv_path: Path, config: dict) -> str:
    aggregator = config.get("federation", {}).get("aggregator")
    attack = config.get("attack", {}).get("kind")
    if aggregator is None:
        return csv_path.stem
    if attack and attack != "none":
        return f"{aggregator} ({attack})"
    return aggregator


def plot_accuracy(csv_paths: Sequence[Union[str, Path]], out_path: Union[str, Path],
                  title: Optional[str] = None) -> Path:
    """
    Draw test accuracy against round for every run and save the figure.

    Runs are labelled by aggregator (and attack) from their JSON snapshot,
    falling back to the CSV file name.

    Raises:
        ValueError: if no CSV is given.
    """
    if not csv_paths:
        raise ValueError("plot_accuracy needs at least one metrics CSV")
    out_path = Path(out_path)

    fig, ax = accuracy_figure()
    for path in csv_paths:
        path = Path(path)
        record = read_metrics(path)
        rounds = [m.round for m in record.metrics]
        accuracies = [m.test_accuracy for m in record.metrics]
        ax.plot(rounds, accuracies, label=_run_label(path, record.config), linewidth=1.5)
    ax.set_ylim(0.0, 1.02)
    ax.legend(loc="lower right")
    if title:
        ax.set_title(title)
    fig.tight_layout()

    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path)
    except OSError as e:
        raise OSError(f"Could not write figure to {out_path}: {e}") from e
    finally:
        plt.close(fig)
    logger.info("Plotted %d runs to %s", len(csv_paths), out_path)
    return out_path
