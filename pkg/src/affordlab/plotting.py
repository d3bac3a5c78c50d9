"""Figures for reports. Needs matplotlib (the ``plot`` extra); imported lazily by the CLI."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise RuntimeError("plotting needs matplotlib: pip install 'artifact[plot]'") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_confusion(metrics, path, title: str = "", normalize: bool = True) -> Path:
    """Row-normalized confusion heatmap (rows are true classes)."""
    plt = _pyplot()
    cm = np.asarray(metrics.confusion, dtype=float)
    if normalize:
        rows = cm.sum(axis=1, keepdims=True)
        cm = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    n = len(metrics.classes)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 0.8 + 0.6 * n))
    im = ax.imshow(cm, cmap="Blues", vmin=0.0, vmax=1.0 if normalize else None)
    ax.set_xticks(range(n), metrics.classes, rotation=60, ha="right", fontsize=8)
    ax.set_yticks(range(n), metrics.classes, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    for i in range(n):
        for j in range(n):
            if cm[i, j] > 0:
                ax.text(j, i, f"{cm[i, j]:.2f}" if normalize else str(int(cm[i, j])), ha="center",
                        va="center", fontsize=6, color="white" if cm[i, j] > 0.5 else "black")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_objective_trace(trace, path) -> Path:
    """QP objective and maximum violation per cutting-plane iteration."""
    plt = _pyplot()
    it = [r["iteration"] for r in trace]
    fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(5, 4))
    a1.plot(it, [r["objective"] for r in trace], marker=".")
    a1.set_ylabel("objective")
    a2.semilogy(it, [max(r["max_violation"], 1e-12) for r in trace], marker=".")
    a2.set_ylabel("max violation")
    a2.set_xlabel("iteration")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
