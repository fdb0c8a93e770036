"""Figures and delimited summaries written next to a run's JSON output."""

from __future__ import annotations

import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: str) -> str:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_figure(losses: dict[str, list[float]], path: str) -> str:
    """One panel per training phase kind, loss against step."""
    kinds = [(k, v) for k, v in losses.items() if v]
    if not kinds:
        kinds = [("loss", [])]
    fig, axes = plt.subplots(1, len(kinds), figsize=(4 * len(kinds), 3), squeeze=False)
    for ax, (name, series) in zip(axes[0], kinds):
        ax.plot(series, linewidth=0.8)
        ax.set_title(name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
    fig.tight_layout()
    return _finish(fig, path)


def metrics_round_figure(records: list[dict], path: str) -> str:
    """Accuracy and macro F1 across rounds, one line style per split."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    splits = sorted({r["split"] for r in records})
    for split in splits:
        rows = sorted((r for r in records if r["split"] == split), key=lambda r: r["round"])
        rounds = [r["round"] for r in rows]
        ax.plot(rounds, [r["accuracy"] for r in rows], marker="o", label=f"{split} acc")
        ax.plot(rounds, [r["macro_f1"] for r in rows], marker="s", linestyle="--",
                label=f"{split} macro F1")
    ax.set_xlabel("round")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _finish(fig, path)


def per_class_figure(report: dict, path: str) -> str:
    """Grouped precision/recall/F1 bars, one group per class."""
    per_class = report.get("per_class", [])
    n = max(len(per_class), 1)
    x = np.arange(n)
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * n), 3.2))
    for off, field in zip((-width, 0.0, width), ("precision", "recall", "f1")):
        vals = [c[field] for c in per_class]
        ax.bar(x + off, vals, width, label=field)
    ax.set_xticks(x)
    ax.set_xticklabels([str(i) for i in range(len(per_class))])
    ax.set_xlabel("class")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title(f"accuracy {report.get('accuracy', float('nan')):.3f}, "
                 f"macro F1 {report.get('macro_f1', float('nan')):.3f}")
    fig.tight_layout()
    return _finish(fig, path)


def budget_figure(lengths: np.ndarray, view: str, cap: int | None, path: str) -> str:
    """Histogram of per-sequence position costs with the cap marked."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    lengths = np.asarray(lengths)
    bins = min(50, max(5, int(np.sqrt(max(lengths.size, 1)))))
    ax.hist(lengths, bins=bins, color="#4878a8")
    if cap is not None:
        ax.axvline(cap, color="firebrick", linestyle="--", label=f"cap {cap}")
        over = float((lengths > cap).mean()) if lengths.size else 0.0
        ax.set_title(f"{view}: {over:.1%} of sequences over cap")
        ax.legend(fontsize=8)
    else:
        ax.set_title(view)
    ax.set_xlabel("positions")
    ax.set_ylabel("sequences")
    fig.tight_layout()
    return _finish(fig, path)


METRIC_COLUMNS = ["round", "split", "n", "accuracy", "macro_f1", "binary_f1",
                  "recall_at_k", "k"]


def metrics_csv(records: list[dict], path: str) -> str:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore",
                                restval="")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec)
    return path
