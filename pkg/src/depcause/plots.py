"""Render training histories and evaluation reports to image files."""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_history(history, path):
    """Loss curves per epoch, with validation metrics on a second axis."""
    epochs = [h.epoch for h in history]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(epochs, [h.train_loss for h in history], color="tab:blue", label="train loss")
    has_val = any(not math.isnan(h.val_loss) for h in history)
    if has_val:
        ax.plot(epochs, [h.val_loss for h in history], color="tab:orange", label="val loss")
        twin = ax.twinx()
        twin.plot(epochs, [h.val_f1 for h in history], color="tab:green",
                  linestyle="--", label="val micro F1")
        twin.plot(epochs, [h.val_exact_match for h in history], color="tab:red",
                  linestyle=":", label="val exact match")
        twin.set_ylabel("metric")
        twin.set_ylim(0.0, 1.05)
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    handles, labels = ax.get_legend_handles_labels()
    if has_val:
        extra, extra_labels = twin.get_legend_handles_labels()
        handles += extra
        labels += extra_labels
    ax.legend(handles, labels, loc="center right", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_report(report, path):
    """Grouped precision/recall/F1 bars with the exact-match line."""
    groups = ("micro", "cause", "effect", "macro")
    rows = (report.micro, report.cause, report.effect, report.macro)
    x = np.arange(len(groups))
    width = 0.25
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.bar(x - width, [r.precision for r in rows], width, label="precision")
    ax.bar(x, [r.recall for r in rows], width, label="recall")
    ax.bar(x + width, [r.f1 for r in rows], width, label="F1")
    ax.axhline(report.exact_match, color="tab:red", linestyle="--",
               label=f"exact match = {report.exact_match:.3f}")
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(loc="lower right", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
