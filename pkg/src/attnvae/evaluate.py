"""Sequence-level detection metrics: confusion counts, precision, recall,
F1, a threshold-swept precision-recall curve, and its trapezoidal area.

Evaluation counts whole sequences, not time steps: a sequence is predicted
positive when its peak anomaly score exceeds the threshold under test. The
curve sweeps thresholds at a fixed step from below the lowest peak to above
the highest, so both all-flagged and none-flagged endpoints are present.
Zero-denominator conventions: precision is 0 when nothing is predicted
positive, recall is 0 when there are no positives, F1 is 0 when precision
and recall are both 0. For the area, the zero-recall end of the curve is
anchored at precision 1, the usual convention that makes a perfect
separator score exactly 1.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

from .detect import DetectionReport
from .errors import ContractError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion(reports: list[DetectionReport], truth: dict[str, bool]) -> ConfusionCounts:
    """Count report labels against ground truth keyed by sequence id."""
    ids = [r.sequence_id for r in reports]
    if sorted(ids) != sorted(truth):
        raise ContractError("confusion: report ids do not match truth ids")
    tp = fp = fn = tn = 0
    for r in reports:
        actual = truth[r.sequence_id]
        if r.label and actual:
            tp += 1
        elif r.label and not actual:
            fp += 1
        elif not r.label and actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def _counts_at(peaks: list[float], truth: list[bool], threshold: float) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    for peak, actual in zip(peaks, truth):
        predicted = peak > threshold
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def precision_recall_f1(counts: ConfusionCounts) -> tuple[float, float, float]:
    p = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    r = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def pr_curve(peaks: list[float], truth: list[bool], step: float = 0.1,
             extra_thresholds: tuple[float, ...] = ()) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) triples over an even threshold grid.

    The grid runs from below the lowest peak to above the highest in the
    given step; extra thresholds (e.g. the operating threshold) are merged
    in so their operating points appear on the curve exactly.
    """
    if len(peaks) != len(truth):
        raise ContractError("pr_curve: peaks and truth lengths differ")
    if all(truth) or not any(truth):
        raise ContractError("pr_curve: need both classes in the truth labels")
    if step <= 0:
        raise ContractError("pr_curve: step must be positive")
    lo = math.floor(min(peaks) / step) * step - step
    hi = max(peaks) + step
    thresholds = []
    t = lo
    while t <= hi:
        thresholds.append(t)
        t += step
    thresholds = sorted(set(thresholds) | set(extra_thresholds))
    curve = []
    for t in thresholds:
        p, r, _ = precision_recall_f1(_counts_at(peaks, truth, t))
        curve.append((t, p, r))
    return curve


def auprc(curve: list[tuple[float, float, float]]) -> float:
    """Trapezoidal area under the precision-recall curve.

    Points are traversed in order of ascending recall (descending threshold);
    zero-recall points are replaced by the (recall 0, precision 1) anchor.
    """
    if not curve:
        raise ContractError("auprc: empty curve")
    ordered = sorted(curve, key=lambda point: point[0], reverse=True)
    points = [(r, p) for _, p, r in ordered if r > 0]
    points = [(0.0, 1.0)] + points
    area = 0.0
    for (r0, p0), (r1, p1) in zip(points, points[1:]):
        area += (r1 - r0) * (p0 + p1) / 2.0
    return area


def best_f1(curve: list[tuple[float, float, float]]) -> float:
    """Best F1 over all curve operating points."""
    if not curve:
        raise ContractError("best_f1: empty curve")
    best = 0.0
    for _, p, r in curve:
        f1 = 2.0 * p * r / (p + r) if p + r else 0.0
        best = max(best, f1)
    return best


def closest_to_ideal_f1(curve: list[tuple[float, float, float]]) -> float:
    """F1 of the curve point with the least Euclidean distance to (1, 1)."""
    if not curve:
        raise ContractError("closest_to_ideal_f1: empty curve")
    best_point = min(curve, key=lambda point: (1.0 - point[1]) ** 2 + (1.0 - point[2]) ** 2)
    _, p, r = best_point
    return 2.0 * p * r / (p + r) if p + r else 0.0


def summarize(reports: list[DetectionReport], truth: dict[str, bool],
              threshold: float, step: float = 0.1) -> dict:
    """Metrics at the operating threshold plus curve-derived quantities."""
    counts = confusion(reports, truth)
    p, r, f1 = precision_recall_f1(counts)
    peaks = [rep.peak for rep in reports]
    labels = [truth[rep.sequence_id] for rep in reports]
    curve = pr_curve(peaks, labels, step, extra_thresholds=(threshold,))
    return {
        "threshold": threshold,
        "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn,
        "precision": p, "recall": r, "f1": f1,
        "f1_best": best_f1(curve),
        "f1_closest": closest_to_ideal_f1(curve),
        "auprc": auprc(curve),
        "curve": curve,
    }


def curve_to_csv(curve: list[tuple[float, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall"])
        for t, p, r in curve:
            writer.writerow([f"{t:.17g}", f"{p:.17g}", f"{r:.17g}"])


def summary_to_json(summary: dict, path) -> None:
    record = {k: v for k, v in summary.items() if k != "curve"}
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")
