"""Figure rendering for evaluation and benchmark outputs.

Figures are written next to the delimited outputs (CSV/JSON) so a metrics
run leaves both machine-readable tables and ready-to-share plots.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["save_pr_curves", "save_bin_ap_chart", "save_bench_chart"]


def save_pr_curves(curves, path) -> None:
    """Precision-recall curves, one per (label, recall, precision) entry."""
    fig, ax = plt.subplots(figsize=(5, 4))
    drew = False
    for label, recall, precision in curves:
        if len(recall) == 0:
            continue
        ax.step(recall, precision, where="post", label=label)
        drew = True
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if drew:
        ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bin_ap_chart(entries, path) -> None:
    """Grouped bars of per-distance-bin AP, one group per class result."""
    fig, ax = plt.subplots(figsize=(6, 4))
    n_classes = max(len(entries), 1)
    width = 0.8 / n_classes
    tick_labels = None
    for ci, (label, result) in enumerate(entries):
        xs, heights = [], []
        labels = []
        for bi, b in enumerate(result.bins):
            labels.append(f"{b.lo:g}-{'inf' if math.isinf(b.hi) else f'{b.hi:g}'} m")
            if b.ap is not None:
                xs.append(bi + ci * width)
                heights.append(b.ap)
        ax.bar(xs, heights, width=width, label=label)
        tick_labels = labels
    if tick_labels:
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(tick_labels))])
        ax.set_xticklabels(tick_labels)
    ax.set_ylabel("AP")
    ax.set_ylim(0, 1.05)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_chart(rows, path) -> None:
    """Per-stage wall time versus point count; rows are (n_points, stage, seconds)."""
    stages: dict[str, list[tuple[int, float]]] = {}
    for n_points, stage, seconds in rows:
        stages.setdefault(stage, []).append((int(n_points), float(seconds)))
    fig, ax = plt.subplots(figsize=(6, 4))
    for stage, samples in stages.items():
        samples.sort()
        ax.plot([s[0] for s in samples], [s[1] for s in samples], marker="o", label=stage)
    ax.set_xlabel("points")
    ax.set_ylabel("seconds")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
