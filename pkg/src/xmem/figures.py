"""Figure rendering for the report paths: training curves, retrieval
summaries and ablation comparisons, written as PNG files next to the CSV
output they visualize."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(records, path) -> None:
    epochs = [r.epoch for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    ax = axes[0, 0]
    ax.plot(epochs, [r.l_ret for r in records], label="retrieval")
    ax.plot(epochs, [r.total for r in records], label="total")
    ax.set_ylabel("loss")
    ax.legend()
    ax = axes[0, 1]
    ax.plot(epochs, [r.wasserstein_est for r in records], color="tab:red")
    ax.set_ylabel("|critic gap|")
    ax = axes[1, 0]
    ax.plot(epochs, [r.l_r2i for r in records], label="r2i")
    ax.plot(epochs, [r.l_i2r for r in records], label="i2r")
    ax.set_ylabel("translation losses")
    ax.set_xlabel("epoch")
    ax.legend()
    ax = axes[1, 1]
    ax.plot(epochs, [r.mean_hinge for r in records], color="tab:green")
    ax.set_ylabel("mean active hinge")
    ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_retrieval_figure(reports, path) -> None:
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.6))
    for rep in reports:
        left.plot(rep.per_subset_medr, marker="o", label=rep.direction)
    left.set_xlabel("subset")
    left.set_ylabel("median rank")
    left.legend()
    width = 0.35
    ks = [1, 5, 10]
    xs = np.arange(len(ks))
    for i, rep in enumerate(reports):
        right.bar(xs + i * width, [rep.recall(k) for k in ks], width, label=rep.direction)
    right.set_xticks(xs + width / 2)
    right.set_xticklabels([f"R@{k}" for k in ks])
    right.set_ylabel("recall (%)")
    right.set_ylim(0, 100)
    right.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_figure(rows, path) -> None:
    """`rows` holds (arm_name, im2rec_report) in display order."""
    arms = [name for name, _ in rows]
    medr = [rep.medr_mean for _, rep in rows]
    r1 = [rep.recall(1) for _, rep in rows]
    xs = np.arange(len(arms))
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.6))
    left.bar(xs, medr, color="tab:blue")
    left.set_xticks(xs)
    left.set_xticklabels(arms, rotation=20, ha="right")
    left.set_ylabel("median rank (mean over subsets)")
    right.bar(xs, r1, color="tab:orange")
    right.set_xticks(xs)
    right.set_xticklabels(arms, rotation=20, ha="right")
    right.set_ylabel("R@1 (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
