"""Delimited report writers and the matplotlib figures rendered beside them."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluate import EvalReport

_METRIC_COLUMNS = (
    "true_positives", "false_positives", "false_negatives",
    "precision", "recall", "f1", "tau", "beta",
)


def write_report_tsv(reports: Sequence[tuple[str, EvalReport]], path: str | Path) -> None:
    """One row per labeled report (e.g. combined / within-domain / cross-domain)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(("label",) + _METRIC_COLUMNS)
        for label, report in reports:
            row = report.to_dict()
            writer.writerow([label] + [row[c] for c in _METRIC_COLUMNS])


def render_report_figure(
    reports: Sequence[tuple[str, EvalReport]], path: str | Path
) -> None:
    """Grouped precision/recall/F1 bars, one group per report."""
    labels = [label for label, _ in reports]
    metrics = np.array(
        [[r.precision, r.recall, r.f1] for _, r in reports]
    )
    x = np.arange(len(labels))
    width = 0.25
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(labels) + 2.0), 3.2))
    for i, (name, color) in enumerate(
        (("precision", "#4878d0"), ("recall", "#ee854a"), ("f1", "#6acc64"))
    ):
        ax.bar(x + (i - 1) * width, metrics[:, i], width, label=name, color=color)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_sweep_tsv(rows: Sequence[EvalReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(_METRIC_COLUMNS)
        for report in rows:
            row = report.to_dict()
            writer.writerow([row[c] for c in _METRIC_COLUMNS])


def render_sweep_heatmap(rows: Sequence[EvalReport], path: str | Path) -> None:
    """F1 over the tau x beta grid, best cell marked."""
    taus = sorted({r.tau for r in rows})
    betas = sorted({r.beta for r in rows})
    grid = np.full((len(taus), len(betas)), np.nan)
    for report in rows:
        grid[taus.index(report.tau), betas.index(report.beta)] = report.f1
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(betas), 1.0 + 0.5 * len(taus)))
    image = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(betas)))
    ax.set_xticklabels([f"{b:g}" for b in betas], fontsize=8)
    ax.set_yticks(range(len(taus)))
    ax.set_yticklabels([f"{t:g}" for t in taus], fontsize=8)
    ax.set_xlabel("beta")
    ax.set_ylabel("tau")
    best = int(np.nanargmax(grid))
    ax.scatter([best % len(betas)], [best // len(betas)], marker="*", s=120, color="red")
    fig.colorbar(image, ax=ax, label="F1")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_training_log(log: Sequence[dict], path: str | Path) -> None:
    """Line-delimited JSON records, one per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def render_training_curves(log: Sequence[dict], path: str | Path) -> None:
    """Loss and dev metrics against the epoch index."""
    epochs = [r["epoch"] for r in log]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(8, 3))
    ax_loss.plot(epochs, [r["train_loss"] for r in log], marker="o", color="#d65f5f")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    for key, color in (
        ("dev_precision", "#4878d0"),
        ("dev_recall", "#ee854a"),
        ("dev_f1", "#6acc64"),
    ):
        ax_f1.plot(epochs, [r[key] for r in log], marker="o", label=key[4:], color=color)
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylim(0.0, 1.05)
    ax_f1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
