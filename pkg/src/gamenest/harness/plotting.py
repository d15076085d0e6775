"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _series(rows: Sequence[Mapping], key: str) -> tuple[list[int], list[float]]:
    xs, ys = [], []
    for r in rows:
        v = r.get(key)
        if v in (None, ""):
            continue
        xs.append(int(r["iteration"]))
        ys.append(float(v))
    return xs, ys


def plot_training_curves(runs: Mapping[str, Sequence[Mapping]], path: str | Path) -> Path:
    """Entropy, gradient norm and mean scalar reward per iteration, one line per run."""
    path = Path(path)
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    panels = (("entropy", "policy entropy (nats)"), ("gradient_norm", "gradient norm"),
              ("scalar_mean", "mean trajectory reward"))
    for ax, (key, label) in zip(axes, panels):
        for color, (name, rows) in zip(_COLORS, runs.items()):
            xs, ys = _series(rows, key)
            ax.plot(xs, ys, color=color, lw=1.2, label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_success_rates(report: Mapping, path: str | Path) -> Path:
    path = Path(path)
    tasks = report["tasks"]
    names = [t["task"] for t in tasks]
    rates = [t["success_rate"] if t["success_rate"] is not None else 0.0 for t in tasks]
    fig, ax = plt.subplots(figsize=(1.4 * len(names) + 2, 3.4))
    bars = ax.bar(names, rates, color=_COLORS[: len(names)])
    for bar, t in zip(bars, tasks):
        ax.annotate(f"{bar.get_height():.2f}\n(n={t['completed']})", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, 1.15)
    ax.set_ylabel("success rate")
    ax.set_title(f"{report['run_id']}  ({report['eval_rounds']} rounds per task)", fontsize=9)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
