"""Figure rendering for metrics CSVs produced by train/evaluate runs.

Reads one or more per-episode metrics files and writes PNG figures plus a
delimited summary next to them: throughput and loss curves over episodes and
the exploration schedule, with a rolling mean to make trends readable.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .sim import CSV_COLUMNS

__all__ = ["load_metrics", "render_report", "SUMMARY_COLUMNS"]

SUMMARY_COLUMNS = (
    "label",
    "episodes",
    "total_steps",
    "total_packets",
    "mean_throughput_mbps",
    "final_quarter_mean_mbps",
    "best_episode_mbps",
)


def load_metrics(path) -> dict[str, np.ndarray]:
    """Metrics CSV -> column arrays; raises ValueError on a foreign header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path} does not look like a metrics CSV (header {header})")
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows) if rows else np.empty((0, len(CSV_COLUMNS)))
    return {name: data[:, i] for i, name in enumerate(CSV_COLUMNS)}


def _rolling(values: np.ndarray, window: int) -> np.ndarray:
    if len(values) == 0 or window <= 1:
        return values
    window = min(window, len(values))
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def render_report(metric_paths, out_dir, labels=None, rolling: int = 25) -> list[str]:
    """Render throughput/loss/epsilon figures and a summary CSV.

    Returns the list of files written. Multiple input CSVs are overlaid with
    their labels (file stems by default).
    """
    if labels is None:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in metric_paths]
    if len(labels) != len(metric_paths):
        raise ValueError("need one label per metrics file")
    runs = [(label, load_metrics(path)) for label, path in zip(labels, metric_paths)]
    os.makedirs(out_dir, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4.2))
    for label, data in runs:
        episodes = data["episode"]
        tput = data["mean_throughput_mbps"]
        ax.plot(episodes, tput, alpha=0.25, lw=0.8)
        smooth = _rolling(tput, rolling)
        offset = len(tput) - len(smooth)
        ax.plot(episodes[offset:], smooth, lw=1.6, label=label)
    ax.set_xlabel("episode")
    ax.set_ylabel("mean step throughput (Mbit/s)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "throughput_vs_episode.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True)
    for (column, title), ax in zip((("master_loss", "master loss"), ("sub_loss", "sub-agent loss")), axes):
        for label, data in runs:
            ax.plot(data["episode"], data[column], lw=0.9, label=label)
        ax.set_xlabel("episode")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        if any(np.any(data[column] > 0) for _, data in runs):
            ax.set_yscale("symlog", linthresh=1e-6)
    axes[0].legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "loss_vs_episode.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6, 3.4))
    for label, data in runs:
        ax.plot(data["episode"], data["mean_epsilon"], lw=1.2, label=label)
    ax.set_xlabel("episode")
    ax.set_ylabel("exploration epsilon")
    ax.set_ylim(-0.02, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "epsilon_vs_episode.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    written.append(path)

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for label, data in runs:
            tput = data["mean_throughput_mbps"]
            quarter = tput[3 * len(tput) // 4:] if len(tput) else np.array([0.0])
            writer.writerow([
                label,
                int(len(tput)),
                int(data["steps"].sum()),
                int(data["packets_delivered"].sum()),
                f"{tput.mean() if len(tput) else 0.0:.6f}",
                f"{quarter.mean() if len(quarter) else 0.0:.6f}",
                f"{tput.max() if len(tput) else 0.0:.6f}",
            ])
    written.append(summary_path)
    return written
