"""Figure rendering for the command-line reports.

Everything draws through the Agg backend straight to files, so these
helpers are safe on headless machines and inside tests.  Each save_*
function renders one figure next to the delimited output it illustrates
and returns the path it wrote.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

from . import data, metrics

_GIGA = 1e9


def class_name(label: int) -> str:
    return f"{data.SHAPES[label // 4]}-{data.DIRECTIONS[label % 4]}"


def save_loss_curves(history: list[dict], path) -> str:
    """Loss components per step with the learning-rate schedule overlaid."""
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(steps, [h["total"] for h in history], label="total", lw=1.2)
    ax.plot(steps, [h["sim"] for h in history], label="similarity", lw=0.9)
    ax.plot(steps, [h["align"] for h in history], label="alignment", lw=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)
    ax2 = ax.twinx()
    ax2.plot(steps, [h["lr"] for h in history], color="0.55", ls="--", lw=0.8)
    ax2.set_ylabel("learning rate", color="0.45")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_ablation_chart(rows: list[dict], axis: str, path) -> str:
    """Mean top-1 bar per axis value, individual seeds as dots."""
    values = []
    for r in rows:
        if r["value"] not in values:
            values.append(r["value"])
    by_value = {v: [r["top1"] for r in rows if r["value"] == v] for v in values}
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(values) + 1.5), 4.0))
    xs = np.arange(len(values))
    means = [float(np.mean(by_value[v])) for v in values]
    ax.bar(xs, means, width=0.6, color="#4878b0", alpha=0.85, zorder=2)
    for i, v in enumerate(values):
        pts = by_value[v]
        ax.scatter([i] * len(pts), pts, s=14, color="#222222", zorder=3)
    ax.set_xticks(xs)
    ax.set_xticklabels([str(v) for v in values], rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("test top-1 accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.axhline(1.0 / data.N_CLASSES, color="0.6", ls=":", lw=0.8)  # chance line
    ax.set_title(f"ablation axis: {axis}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_cost_chart(table: list[metrics.SchemeCost], asymptotic: dict[str, int], path) -> str:
    """Exact GMACs per scheme, with the constants-free terms alongside."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    names = [r.scheme for r in table]
    ax1.barh(names, [r.macs / _GIGA for r in table], color="#4878b0", alpha=0.85)
    ax1.set_xlabel("exact GMACs")
    ax1.invert_yaxis()
    ax2.barh(names, [asymptotic[s] for s in names], color="#b0784a", alpha=0.85)
    ax2.set_xscale("log")
    ax2.set_xlabel("asymptotic expression value (constants = 1)")
    ax2.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_confusion(scores: np.ndarray, labels: np.ndarray, path) -> str:
    """Row-normalized confusion matrix from raw score rows."""
    k = scores.shape[1]
    counts = np.zeros((k, k))
    pred = np.argmax(scores, axis=1)
    for t, p in zip(labels, pred):
        counts[int(t), int(p)] += 1
    norm = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(norm, cmap="Blues", vmin=0.0, vmax=1.0)
    names = [class_name(i) for i in range(k)] if k == data.N_CLASSES \
        else [str(i) for i in range(k)]
    ax.set_xticks(range(k))
    ax.set_yticks(range(k))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_clip_montage(clips_u8: np.ndarray, labels: np.ndarray, path,
                      max_clips: int = 8) -> str:
    """First few clips laid out one row per clip, one column per frame."""
    n = min(max_clips, len(clips_u8))
    T = clips_u8.shape[1]
    fig, axes = plt.subplots(n, T, figsize=(1.1 * T, 1.1 * n), squeeze=False)
    for i in range(n):
        for t in range(T):
            ax = axes[i][t]
            ax.imshow(clips_u8[i, t])
            ax.set_xticks([])
            ax.set_yticks([])
            if t == 0:
                ax.set_ylabel(class_name(int(labels[i])), fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
