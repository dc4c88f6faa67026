"""Figure rendering for training curves and evaluation summaries.

Every report-producing stage also drops a PNG next to its delimited output.
Uses the Agg backend so headless runs work.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def plot_loss_curve(losses: Sequence[float], title: str, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(losses)), losses, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_link_prediction(raw: dict, filtered: dict, path: str | Path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 4))
    modes = ["raw", "filter"]
    ax1.bar(modes, [raw["mean_rank"], filtered["mean_rank"]], color="tab:orange")
    ax1.set_title("mean rank (lower is better)")
    ax2.bar(modes, [raw["hits_at_10"], filtered["hits_at_10"]], color="tab:green")
    ax2.set_ylim(0, 1)
    ax2.set_title("Hits@10")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_comparison(top_beam: dict, reranked: dict, path: str | Path) -> None:
    """Grouped bars: generation metrics before and after re-ranking."""
    names = ["bleu4", "rouge_l_mean", "entity_f1"]
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = range(len(names))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], [top_beam[n] for n in names],
           width, label="top beam", color="tab:gray")
    ax.bar([x + width / 2 for x in xs], [reranked[n] for n in names],
           width, label="reranked", color="tab:blue")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("generation metrics, before vs after re-ranking")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
