"""Matplotlib renderings of the delimited reports, written next to them."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def pretrain_curve(metrics: list[dict], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [m["epoch"] for m in metrics]
    ax.plot(epochs, [m["loss"] for m in metrics], marker="o", color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("next-token NLL")
    ax.set_title("supervised pretraining")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_curves(metrics: list[dict], path) -> None:
    steps = [m["step"] for m in metrics]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))

    ax = axes[0]
    ax.plot(steps, [m["mean_reward"] for m in metrics], label="reward", color="tab:blue")
    ax.plot(steps, [m["mean_acc"] for m in metrics], label="accuracy", color="tab:green")
    ax.plot(steps, [m["mean_fmt"] for m in metrics], label="format", color="tab:orange")
    ax.set_xlabel("step")
    ax.set_title("mean group reward")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)

    ax = axes[1]
    ax.plot(steps, [m["loss"] for m in metrics], color="tab:red")
    ax.set_xlabel("step")
    ax.set_title("surrogate loss")
    ax.grid(alpha=0.3)

    ax = axes[2]
    ax.plot(steps, [m["entropy"] for m in metrics], color="tab:purple", label="entropy")
    ax.plot(steps, [m["clip_fraction"] for m in metrics], color="tab:gray", label="clip fraction")
    ax.set_xlabel("step")
    ax.set_title("policy diagnostics")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def pca_shift_figure(report, path) -> None:
    """Per-layer 2D scatter of both snapshots with their centers marked.

    Needs a report built with keep_projections=True; falls back to a
    centers-only rendering otherwise.
    """
    n_layers = len(report.layer_distances)
    fig, axes = plt.subplots(1, n_layers, figsize=(3.6 * n_layers, 3.6), squeeze=False)
    for i in range(n_layers):
        ax = axes[0][i]
        if report.projections_a is not None:
            ax.scatter(*report.projections_a[i].T, s=4, alpha=0.35,
                       color="tab:blue", label=report.tag_a)
            ax.scatter(*report.projections_b[i].T, s=4, alpha=0.35,
                       color="tab:orange", label=report.tag_b)
        ax.scatter(*report.centers_a[i], marker="*", s=140, color="tab:blue",
                   edgecolor="black", zorder=3)
        ax.scatter(*report.centers_b[i], marker="*", s=140, color="tab:orange",
                   edgecolor="black", zorder=3)
        ax.set_title(f"layer {i}  d={report.layer_distances[i]:.4f}", fontsize=9)
        ax.grid(alpha=0.3)
        if i == 0:
            ax.legend(fontsize=8)
    fig.suptitle(
        f"representation shift {report.tag_a} -> {report.tag_b}: "
        f"aggregate {report.aggregate:.4f}",
        fontsize=10,
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
