"""Figure rendering for detection runs, training histories, and PR curves.

All figures are written straight to files through the non-interactive
matplotlib backend, so commands work headless; every plotting call closes
its figure.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .detect import DetectionReport


def plot_score_trace(report: DetectionReport, path) -> None:
    """Anomaly score over time with the threshold line and peak marker."""
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(report.scores, lw=0.9, color="tab:blue", label="anomaly score")
    ax.axhline(report.threshold, color="tab:red", ls="--", lw=1.0, label="threshold")
    ax.plot(report.peak_time, report.peak, "v", color="tab:orange", ms=7,
            label=f"peak {report.peak:.1f}")
    ax.set_xlabel("time step")
    ax.set_ylabel("score")
    verdict = "anomalous" if report.label else "normal"
    ax.set_title(f"{report.sequence_id}: {verdict}")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_pr_curves(curves: dict[str, list[tuple[float, float, float]]], path) -> None:
    """One or more precision-recall curves on shared axes."""
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    for name, curve in curves.items():
        ordered = sorted(curve, key=lambda point: point[0], reverse=True)
        recall = [r for _, _, r in ordered]
        precision = [p for _, p, _ in ordered]
        ax.plot(recall, precision, marker=".", ms=4, lw=1.0, label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history: list[dict[str, float]], path) -> None:
    """Training and validation reconstruction losses with the KL weight."""
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(8, 3.6))
    ax.plot(epochs, [row["recon"] for row in history], lw=1.0, label="train recon")
    ax.plot(epochs, [row["val_recon"] for row in history], lw=1.0, label="val recon")
    best = [row["epoch"] for row in history if row["best_flag"]]
    if best:
        ax.axvline(best[-1], color="tab:green", ls=":", lw=1.0, label="best epoch")
    ax.set_xlabel("epoch")
    ax.set_ylabel("reconstruction loss")
    ax.legend(loc="upper right", fontsize=8)
    ax2 = ax.twinx()
    ax2.plot(epochs, [row["beta"] for row in history], color="tab:gray", lw=0.8, alpha=0.7)
    ax2.set_yscale("log")
    ax2.set_ylabel("KL weight", color="tab:gray")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_peaks(reports: list[DetectionReport], truth: dict[str, bool],
               threshold: float, path) -> None:
    """Peak score per sequence, colored by ground truth, with the threshold."""
    fig, ax = plt.subplots(figsize=(8, 3.6))
    idx_normal = [i for i, r in enumerate(reports) if not truth[r.sequence_id]]
    idx_anom = [i for i, r in enumerate(reports) if truth[r.sequence_id]]
    peaks = np.array([r.peak for r in reports])
    ax.plot(idx_normal, peaks[idx_normal], "o", ms=4, color="tab:blue", label="normal")
    ax.plot(idx_anom, peaks[idx_anom], "o", ms=4, color="tab:red", label="anomalous")
    ax.axhline(threshold, color="tab:red", ls="--", lw=1.0, label="threshold")
    ax.set_xlabel("sequence index")
    ax.set_ylabel("peak score")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
