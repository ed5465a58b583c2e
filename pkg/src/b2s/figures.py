"""Matplotlib renders written next to the delimited outputs they illustrate."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curve(rows: list[dict], path: Path,
                        reset_steps: set[int] | None = None) -> Path:
    """Loss components vs step with the LR trace on a twin log axis."""
    path = Path(path)
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in (("frame_loss", "frame"), ("postnet_loss", "postnet"),
                       ("stop_loss", "stop"), ("total", "total")):
        ax.plot(steps, [r[key] for r in rows], label=label, linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    for s in sorted(reset_steps or ()):
        if steps and steps[0] <= s <= steps[-1]:
            ax.axvline(s, color="grey", linestyle=":", linewidth=0.8)
    ax2 = ax.twinx()
    ax2.plot(steps, [r["lr"] for r in rows], color="black", linestyle="--",
             linewidth=0.8, label="lr")
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_adaptation_curve(rows: list[dict], path: Path) -> Path:
    path = Path(path)
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [r["cer"] for r in rows], marker="o", label="oracle CER")
    ax.set_xlabel("step")
    ax.set_ylabel("CER")
    ax.set_ylim(bottom=0)
    ax2 = ax.twinx()
    ax2.plot(steps, [r["dtw_mse"] for r in rows], marker="s", color="tab:orange",
             label="DTW-MSE")
    ax2.set_ylabel("DTW-MSE")
    ax2.set_ylim(bottom=0)
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metric_bars(reports: list, path: Path) -> Path:
    """Grouped bars: CER / CER-Ex / DTW-MSE per language."""
    path = Path(path)
    langs = [r.language_id for r in reports]
    x = np.arange(len(langs))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(5, 0.9 * len(langs) + 2), 4))
    ax.bar(x - width, [r.cer for r in reports], width, label="CER")
    ax.bar(x, [r.cer_ex for r in reports], width, label="CER-Ex")
    ax.bar(x + width, [r.dtw_mse for r in reports], width, label="DTW-MSE")
    ax.set_xticks(x, langs, rotation=30, ha="right")
    ax.set_ylabel("metric value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_overlap_heatmap(languages, values: np.ndarray, path: Path) -> Path:
    """Shaded grid of pairwise overlaps with language labels (SVG-friendly)."""
    path = Path(path)
    n = len(languages)
    fig, ax = plt.subplots(figsize=(0.65 * n + 2, 0.65 * n + 1.5))
    im = ax.imshow(values, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(n), languages, rotation=45, ha="right")
    ax.set_yticks(range(n), languages)
    for i in range(n):
        for j in range(n):
            ax.text(j, i, f"{100 * values[i, j]:.0f}", ha="center", va="center",
                    fontsize=7, color="white" if values[i, j] < 0.6 else "black")
    fig.colorbar(im, ax=ax, shrink=0.8, label="shared neurons")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
