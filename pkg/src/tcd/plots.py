"""Matplotlib figures rendered next to the CSV/JSON outputs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def training_curves(log_csv, out_png):
    """Loss and validation-metric curves from a train_log.csv."""
    with open(log_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{log_csv} has no epochs to plot")
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [float(r["l_seg"]) for r in rows], label="train L_seg")
    ax1.plot(epochs, [float(r["val_l_seg"]) for r in rows], label="val L_seg")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.set_title("segmentation loss")
    ax2.plot(epochs, [float(r["val_f1"]) for r in rows], label="val pixel F1")
    ax2.plot(epochs, [float(r["val_pair_acc"]) for r in rows], label="val pair acc")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 1)
    ax2.legend()
    ax2.set_title("validation quality")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def metrics_bars(report: dict, out_png):
    """Bar chart of the pixel and pair metrics from an eval report."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    px = report["pixel"]
    ax1.bar(list(px), [px[k] for k in px], color="tab:blue")
    ax1.set_ylim(0, 1)
    ax1.set_title("pixel metrics")
    cl = report["classification"]
    ax2.bar(list(cl), [cl[k] for k in cl], color="tab:orange")
    ax2.set_ylim(0, 1)
    ax2.set_title("pair classification")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
