"""Report figures: sweep heatmaps, ablation bars, loss curves. Files only (Agg)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRICS = ("kld", "sim", "nss")
_LABELS = {"kld": "KLD (lower better)", "sim": "SIM (higher better)", "nss": "NSS (higher better)"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def sweep_heatmap(matrix: np.ndarray, rows: Sequence[float], cols: Sequence[float], keys, metric: str, path) -> Path:
    matrix = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(matrix, cmap="viridis_r" if metric == "kld" else "viridis", origin="lower")
    ax.set_xticks(range(len(cols)), [f"{c:g}" for c in cols])
    ax.set_yticks(range(len(rows)), [f"{r:g}" for r in rows])
    ax.set_xlabel(keys[1])
    ax.set_ylabel(keys[0])
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.3f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, ax=ax, label=_LABELS.get(metric, metric))
    return _save(fig, path)


def ablation_bars(rows, path) -> Path:
    """``rows``: sequence of (name, MetricReport)."""
    names = [n for n, _ in rows]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
    x = np.arange(len(names))
    for ax, m in zip(axes, METRICS):
        ax.bar(x, [getattr(r, m) for _, r in rows], color="0.45")
        ax.set_xticks(x, names, rotation=30, ha="right", fontsize=8)
        ax.set_title(_LABELS[m], fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def loss_curve(history, path) -> Path:
    it = np.arange(1, len(history) + 1)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name in ("bce", "ami", "omi", "total"):
        ax.plot(it, [getattr(h, name) for h in history], label=name, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend(fontsize=8)
    return _save(fig, path)
