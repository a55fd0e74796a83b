"""Figure rendering for the report stage.  All figures go to files; the Agg
backend is forced so no display is ever needed.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evalbench import RECALL_BUDGETS, TOP_KS, EvalReport, EvalTask
from .types import RelationshipType

FIGURE_DPI = 120


def save_type_frequency_plot(
    histogram: Sequence[tuple[RelationshipType, int]], path: Union[str, Path]
) -> None:
    """Rank-frequency curve of relationship types on log-log axes."""
    counts = [max(int(c), 1) for _, c in histogram]
    ranks = range(1, len(counts) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    if counts:
        ax.loglog(ranks, counts, drawstyle="steps-post", color="tab:blue")
    ax.set_xlabel("type rank")
    ax.set_ylabel("instances")
    ax.set_title("relationship type frequency")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def save_subtype_distribution_plot(
    distribution: Mapping[str, int], path: Union[str, Path]
) -> None:
    names = sorted(distribution)
    values = [distribution[n] for n in names]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(names, values, color="tab:orange")
    ax.set_ylabel("subject instances")
    ax.set_title("human subtype distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def save_loss_curve_plot(
    curve: Sequence[tuple[int, float]], path: Union[str, Path]
) -> None:
    epochs = [e for e, _ in curve]
    losses = [l for _, l in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, marker="o", markersize=3, color="tab:green")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_title("metric training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def save_recall_grid_plot(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    """Grouped bars of every (task, budget, top-k) cell, one panel per suite."""
    if not reports:
        raise ValueError("no reports to plot")
    fig, axes = plt.subplots(
        1, len(reports), figsize=(5 * len(reports), 4), squeeze=False, sharey=True
    )
    labels = [
        f"R@{r} top-{k}" for r in RECALL_BUDGETS for k in TOP_KS
    ]
    width = 0.25
    for col, report in enumerate(reports):
        ax = axes[0][col]
        for t_idx, task in enumerate(EvalTask):
            heights: list[float] = []
            for r in RECALL_BUDGETS:
                for k in TOP_KS:
                    value: Optional[float] = report.cell(task, r, k)
                    heights.append(0.0 if value is None else value)
            positions = [i + (t_idx - 1) * width for i in range(len(labels))]
            ax.bar(positions, heights, width=width, label=task.value)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylim(0.0, 1.05)
        ax.set_title(f"{report.suite} ({report.gt_instances} GT)")
        if col == 0:
            ax.set_ylabel("recall")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
