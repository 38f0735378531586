"""Rendering of training curves and evaluation reports to image files.

Uses the non-interactive Agg backend so the CLI can run headless; every
figure is written to disk and closed, never shown.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .harness import CurvePoint, EvalReport  # noqa: E402


def save_loss_curve(curve: list[CurvePoint], path: str | Path) -> None:
    """Training loss per iteration, with validation accuracy when present."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([p.iteration for p in curve], [p.loss for p in curve],
            color="tab:blue", linewidth=1.0, label="training loss")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)

    val = [(p.iteration, p.val_accuracy) for p in curve if p.val_accuracy is not None]
    if val:
        twin = ax.twinx()
        twin.plot([i for i, _ in val], [a for _, a in val],
                  color="tab:orange", marker="o", markersize=3,
                  linewidth=1.0, label="validation accuracy")
        twin.set_ylabel("validation accuracy (%)")
        lines = ax.get_lines() + twin.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="best")
    else:
        ax.legend(loc="best")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_eval_comparison(reports: list[tuple[str, EvalReport]],
                         path: str | Path) -> None:
    """Mean accuracy with 95% CI error bars, one labeled arm per entry."""
    labels = [label for label, _ in reports]
    means = [r.mean_accuracy for _, r in reports]
    cis = [r.ci95 for _, r in reports]

    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(reports), 4))
    xs = range(len(reports))
    ax.errorbar(xs, means, yerr=cis, fmt="o", color="tab:blue",
                ecolor="tab:gray", capsize=5)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=15, ha="right")
    ax.set_ylabel("episode accuracy (%)")
    ax.set_xlim(-0.5, len(reports) - 0.5)
    ax.grid(True, axis="y", alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
