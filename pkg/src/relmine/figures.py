"""Matplotlib renderings of the CLI reports, written next to the CSVs.

Every renderer takes already-computed report data, writes one PNG, and
returns its path; nothing here recomputes results.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

FIGSIZE = (7.0, 4.2)
DPI = 150


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def save_histogram_figure(counts, tau: float | None, path: str | Path) -> Path:
    """Bar chart of mined-negative relevance (integer percent bins); the
    relevance-aware cutoff is drawn as a vertical line when given."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    total = max(sum(counts), 1)
    freqs = [c / total for c in counts]
    ax.bar(range(len(counts)), freqs, width=1.0, color="steelblue", edgecolor="none")
    if tau is not None:
        ax.axvline(tau * 100, color="darkorange", linewidth=2, label=f"cutoff at {tau:.2f}")
        ax.legend()
    ax.set_xlabel("relevance of mined hard negative (%)")
    ax.set_ylabel("relative frequency")
    ax.set_title("Relevance distribution of mined hard negatives")
    ax.set_xlim(-1, 101)
    return _save(fig, path)


def save_training_curves(step_logs, val_logs, path: str | Path) -> Path:
    """Loss per step and, when available, validation nDCG per epoch."""
    panels = 2 if val_logs else 1
    fig, axes = plt.subplots(1, panels, figsize=(FIGSIZE[0] * panels / 1.6, FIGSIZE[1]))
    axes = [axes] if panels == 1 else list(axes)
    ax = axes[0]
    ax.plot([row.total for row in step_logs], color="steelblue", linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("batch loss")
    ax.set_title("Training loss")
    if val_logs:
        ax = axes[1]
        epochs = [row.epoch for row in val_logs]
        ax.plot(epochs, [row.ndcg_avg for row in val_logs], marker="o", color="seagreen")
        ax.set_xlabel("epoch")
        ax.set_ylabel("validation nDCG (%)")
        ax.set_title("Validation nDCG")
    fig.tight_layout()
    return _save(fig, path)


def save_metrics_figure(report, path: str | Path) -> Path:
    """Grouped bars for nDCG (and mAP when defined) per direction."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    labels = ["t2v", "v2t", "avg"]
    x = range(3)
    ndcg_vals = [report.ndcg_t2v, report.ndcg_v2t, report.ndcg_avg]
    width = 0.38
    ax.bar([i - width / 2 for i in x], ndcg_vals, width=width, label="nDCG", color="steelblue")
    if report.map_avg is not None:
        map_vals = [report.map_t2v, report.map_v2t, report.map_avg]
        ax.bar([i + width / 2 for i in x], map_vals, width=width, label="mAP", color="darkorange")
    ax.set_xticks(list(x), labels)
    ax.set_ylabel("percent")
    ax.set_title("Retrieval quality by direction")
    ax.legend()
    return _save(fig, path)


def save_sweep_figure(rows: list[dict], path: str | Path) -> Path:
    """One line per metric over the sweep's grid points."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    labels = [row["label"] for row in rows]
    x = range(len(rows))
    ax.plot(x, [row["ndcg_avg"] for row in rows], marker="o", label="nDCG avg", color="steelblue")
    if all(row.get("map_avg") is not None for row in rows):
        ax.plot(x, [row["map_avg"] for row in rows], marker="s", label="mAP avg", color="darkorange")
    ax.set_xticks(list(x), labels, rotation=30, ha="right")
    ax.set_ylabel("percent")
    ax.set_title("Sweep results")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
