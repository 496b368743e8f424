"""Figure rendering for experiment reports.

Figures are written next to the delimited output: smoothed learning
curves per variant and a bar chart of the final evaluation metrics.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _smooth(values: np.ndarray, window: int = 10) -> np.ndarray:
    if values.size < window:
        return values
    return np.convolve(values, np.ones(window) / window, mode="valid")


def _load_rewards(out_dir: Path, variant: str, seed: int) -> np.ndarray:
    path = out_dir / f"metrics_{variant}_{seed}.csv"
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.atleast_1d(data["mean_reward"])


def render_learning_curves(configs, out_dir: Path,
                           filename: str = "learning_curves.png") -> Path:
    """Seed-averaged smoothed reward per episode, one line per variant."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for config in configs:
        tag = config.variant.value
        curves = [_load_rewards(out_dir, tag, s) for s in config.seeds]
        n = min(c.size for c in curves)
        mean = np.mean([c[:n] for c in curves], axis=0)
        ax.plot(np.arange(_smooth(mean).size), _smooth(mean), label=tag)
    ax.set_xlabel("training episode")
    ax.set_ylabel("mean per-step reward (smoothed)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / filename
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_final_metrics(stats, out_dir: Path,
                         filename: str = "final_metrics.png") -> Path:
    """Final evaluation reward / latency / throughput per variant."""
    names = [s.variant.value for s in stats]
    panels = [
        ("final reward", [s.reward_mean for s in stats], [s.reward_sd for s in stats]),
        ("latency (ms)", [s.latency_mean for s in stats], [s.latency_sd for s in stats]),
        ("throughput (pkt/s)", [s.throughput_mean for s in stats],
         [s.throughput_sd for s in stats]),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))
    x = np.arange(len(names))
    for ax, (title, means, sds) in zip(axes, panels):
        ax.bar(x, means, yerr=sds, capsize=3)
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.set_title(title, fontsize=9)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    path = out_dir / filename
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_comparison_figures(configs, stats, out_dir: Path) -> list[Path]:
    return [render_learning_curves(configs, Path(out_dir)),
            render_final_metrics(stats, Path(out_dir))]
