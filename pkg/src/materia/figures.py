"""Render report figures to files next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import DomainDistribution
from .evaluate import SimilarityReport, max_marks


def save_distribution_figure(dist: DomainDistribution, path: str | Path) -> Path:
    """Horizontal bar chart of QA counts per domain label."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    labels = list(dist.counts.keys())
    counts = [dist.counts[label] for label in labels]
    fig, ax = plt.subplots(figsize=(8, max(2.5, 0.45 * len(labels) + 1)))
    positions = range(len(labels))
    ax.barh(positions, counts, color="#4878a8")
    ax.set_yticks(positions)
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel("QA pairs")
    ax.set_title(f"Domain distribution (total {dist.total})")
    for pos, count in zip(positions, counts):
        ax.text(count, pos, f" {count}", va="center", fontsize=9)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def save_similarity_figure(report: SimilarityReport, path: str | Path) -> Path:
    """Grouped bar chart of per-question similarity, one group per question;
    the benchmark row is drawn as a reference line at its (unit) value."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    question_count = len(report.questions)
    model_names = report.models[1:]
    marks = max_marks(report)

    fig, ax = plt.subplots(figsize=(max(6, 2.2 * question_count + 2), 4.5))
    group_positions = np.arange(question_count, dtype=float)
    if model_names:
        width = 0.8 / len(model_names)
        cmap = plt.get_cmap("tab10")
        for offset, model in enumerate(model_names, start=1):
            values = [report.scores[offset][q] for q in range(question_count)]
            xs = group_positions + (offset - 1 - (len(model_names) - 1) / 2) * width
            bars = ax.bar(xs, values, width=width, label=model, color=cmap((offset - 1) % 10))
            for q_index, bar in enumerate(bars):
                if offset in marks[q_index]:
                    ax.text(
                        bar.get_x() + bar.get_width() / 2,
                        bar.get_height(),
                        "*",
                        ha="center",
                        va="bottom",
                        fontsize=12,
                    )
    ax.axhline(1.0, color="#888888", linestyle="--", linewidth=1, label=report.benchmark_label)
    ax.set_xticks(group_positions)
    ax.set_xticklabels(report.questions)
    ax.set_ylabel("cosine similarity")
    ax.set_ylim(0.0, 1.1)
    ax.set_title("Answer similarity to benchmark")
    ax.legend(fontsize=8, ncols=2)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
