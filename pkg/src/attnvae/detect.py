"""Sequence scoring: windowing, inference, reassembly, threshold, label.

A sequence of length T is cut into T-W+1 unit-shift windows, each window is
reconstructed by the model's deterministic pass, and the per-window output
distributions are reassembled into one distribution over the full sequence.
The mean mode averages every overlapping window value per time step (means
and variances are averaged, standard deviations are derived afterwards,
since distributions cannot be combined by averaging standard deviations);
the first and last modes keep each window's first or last time step, using
the final or initial window to cover the tail or head. The anomaly score
per time step is the negative log probability of the observation under the
reassembled distribution, summed over channels, and a sequence is flagged
anomalous when its peak score exceeds the threshold. The threshold is the
maximum score observed anywhere on the validation set, so by construction
no validation sequence is flagged.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import LOG_2PI
from .data import Sequence, make_windows
from .errors import ContractError, DimensionError
from .model import Model, forward_infer

REVERSE_MODES: tuple[str, ...] = ("mean", "first", "last")

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class DetectionReport:
    sequence_id: str
    scores: np.ndarray
    threshold: float
    label: bool
    peak: float
    peak_time: int
    mu: np.ndarray
    sigma: np.ndarray


def _check_mode(mode: str) -> None:
    if mode not in REVERSE_MODES:
        raise ContractError(f"unknown reverse mode {mode!r}; known: {', '.join(REVERSE_MODES)}")


def reverse_window(window_mus: np.ndarray, window_vars: np.ndarray, t_len: int,
                   mode: str = "mean") -> tuple[np.ndarray, np.ndarray]:
    """Reassemble (n, W, d) per-window distribution stacks into (T, d) arrays.

    Windows must sit at unit offsets, so n = T - W + 1. Returns the sequence
    mean and standard deviation.
    """
    _check_mode(mode)
    mus = np.asarray(window_mus, dtype=np.float64)
    variances = np.asarray(window_vars, dtype=np.float64)
    if mus.ndim != 3 or mus.shape != variances.shape:
        raise DimensionError(
            f"reverse_window: need matching (n, W, d) stacks, got {mus.shape} "
            f"and {variances.shape}")
    n, w, d = mus.shape
    if n != t_len - w + 1:
        raise ContractError(
            f"reverse_window: {n} windows cannot tile length {t_len} at unit shift "
            f"(expected {t_len - w + 1})")

    if mode == "mean":
        mu_acc = np.zeros((t_len, d))
        var_acc = np.zeros((t_len, d))
        count = np.zeros((t_len, 1))
        for j in range(w):
            mu_acc[j:j + n] += mus[:, j]
            var_acc[j:j + n] += variances[:, j]
            count[j:j + n] += 1.0
        return mu_acc / count, np.sqrt(var_acc / count)
    if mode == "first":
        mu_seq = np.concatenate([mus[:, 0], mus[-1, 1:]], axis=0)
        var_seq = np.concatenate([variances[:, 0], variances[-1, 1:]], axis=0)
    else:
        mu_seq = np.concatenate([mus[0, :-1], mus[:, -1]], axis=0)
        var_seq = np.concatenate([variances[0, :-1], variances[:, -1]], axis=0)
    return mu_seq, np.sqrt(var_seq)


def score(x: np.ndarray, mu_seq: np.ndarray, sigma_seq: np.ndarray) -> np.ndarray:
    """Per-time-step negative log probability, summed over channels."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != mu_seq.shape or x.shape != sigma_seq.shape:
        raise DimensionError(
            f"score: shapes differ x={x.shape} mu={mu_seq.shape} sigma={sigma_seq.shape}")
    if (sigma_seq < SIGMA_FLOOR).any():
        warnings.warn(f"output sigma floored at {SIGMA_FLOOR}")
        sigma_seq = np.maximum(sigma_seq, SIGMA_FLOOR)
    z = (x - mu_seq) / sigma_seq
    per_elem = 0.5 * (LOG_2PI + 2.0 * np.log(sigma_seq) + z * z)
    return per_elem.sum(axis=1)


def score_sequence(model: Model, seq: Sequence, mode: str = "mean",
                   chunk: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full pipeline for one normalized sequence: unit-shift windows, batched
    inference, reassembly, scoring. Returns (scores, mu_seq, sigma_seq)."""
    _check_mode(mode)
    w = model.config.window
    windows = make_windows(seq, w, 1).windows
    mus = np.empty_like(windows)
    variances = np.empty_like(windows)
    for start in range(0, len(windows), chunk):
        mu, log_var = forward_infer(model, windows[start:start + chunk])
        mus[start:start + chunk] = mu
        variances[start:start + chunk] = np.exp(log_var)
    mu_seq, sigma_seq = reverse_window(mus, variances, seq.n_steps, mode)
    return score(seq.values, mu_seq, sigma_seq), mu_seq, sigma_seq


def estimate_threshold(model: Model, validation: list[Sequence],
                       mode: str = "mean") -> float:
    """Maximum anomaly score over all validation sequences and time steps."""
    if not validation:
        raise ContractError("estimate_threshold: empty validation set")
    peak = -np.inf
    for seq in validation:
        scores, _, _ = score_sequence(model, seq, mode)
        peak = max(peak, float(scores.max()))
    return peak


def detect(model: Model, seq: Sequence, threshold: float,
           mode: str = "mean") -> DetectionReport:
    """Score one normalized sequence and label it against the threshold."""
    scores, mu_seq, sigma_seq = score_sequence(model, seq, mode)
    peak_time = int(np.argmax(scores))
    peak = float(scores[peak_time])
    return DetectionReport(seq.id, scores, float(threshold), bool(peak > threshold),
                           peak, peak_time, mu_seq, sigma_seq)


def report_to_csv(report: DetectionReport, channels: tuple[str, ...], path) -> None:
    header = (["t", "score"]
              + [f"mu_{c}" for c in channels]
              + [f"sigma_{c}" for c in channels])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(len(report.scores)):
            row = [t, f"{report.scores[t]:.17g}"]
            row += [f"{v:.17g}" for v in report.mu[t]]
            row += [f"{v:.17g}" for v in report.sigma[t]]
            writer.writerow(row)


def report_summary(report: DetectionReport) -> dict:
    return {
        "id": report.sequence_id,
        "label": report.label,
        "threshold": report.threshold,
        "peak": report.peak,
        "peak_time": report.peak_time,
    }


def write_summaries(reports: list[DetectionReport], path) -> None:
    with open(path, "w") as fh:
        json.dump([report_summary(r) for r in reports], fh, indent=2)
        fh.write("\n")
