"""Calibration and binary classification metrics: expected calibration error
over equal-width confidence bins, reliability-diagram data, and yes/no
confusion-matrix metrics with "yes" as the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import TokenDistribution
from .errors import VordError

__all__ = [
    "PredictionRecord",
    "BinStats",
    "CalibrationReport",
    "BinaryMetrics",
    "ece",
    "binary_metrics",
    "answer_confidence",
]

DEFAULT_BINS = 15


@dataclass(frozen=True)
class PredictionRecord:
    confidence: float
    correct: bool

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise VordError("bad-record", f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class BinStats:
    count: int
    mean_conf: float
    mean_acc: float


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    bins: tuple[BinStats, ...]
    n_total: int
    n_bins: int

    def to_json_dict(self) -> dict:
        return {
            "ece": self.ece,
            "n_total": self.n_total,
            "n_bins": self.n_bins,
            "bins": [
                {"count": b.count, "mean_conf": b.mean_conf, "mean_acc": b.mean_acc}
                for b in self.bins
            ],
        }

    def reliability_rows(self) -> list[dict]:
        """Rows for a reliability-diagram CSV: bin center, accuracy, confidence, count."""
        width = 1.0 / self.n_bins
        return [
            {
                "bin_center": (i + 0.5) * width,
                "mean_acc": b.mean_acc,
                "mean_conf": b.mean_conf,
                "count": b.count,
            }
            for i, b in enumerate(self.bins)
        ]


@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def bin_index(confidence: float, n_bins: int) -> int:
    """Equal-width bin over [0, 1]: bin b holds [b/B, (b+1)/B), last bin right-closed."""
    return min(int(confidence * n_bins), n_bins - 1)


def ece(records: Sequence[PredictionRecord], n_bins: int = DEFAULT_BINS) -> CalibrationReport:
    """Expected calibration error: bin-weighted mean absolute gap between
    each bin's accuracy and its mean confidence.  Empty bins contribute zero.
    """
    if len(records) == 0:
        raise VordError("no-data", "calibration needs at least one record")
    if n_bins < 1:
        raise VordError("bad-config", "n_bins must be >= 1")
    conf = np.asarray([r.confidence for r in records], dtype=np.float64)
    correct = np.asarray([r.correct for r in records], dtype=np.float64)
    idx = np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    conf_sums = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sums = np.bincount(idx, weights=correct, minlength=n_bins)
    n = len(records)
    bins = []
    total = 0.0
    for b in range(n_bins):
        if counts[b] == 0:
            bins.append(BinStats(0, 0.0, 0.0))
            continue
        mean_conf = conf_sums[b] / counts[b]
        mean_acc = acc_sums[b] / counts[b]
        total += (counts[b] / n) * abs(mean_acc - mean_conf)
        bins.append(BinStats(int(counts[b]), float(mean_conf), float(mean_acc)))
    return CalibrationReport(ece=float(total), bins=tuple(bins), n_total=n, n_bins=n_bins)


def binary_metrics(
    predictions: Sequence[tuple[str, float]],
    labels: Sequence[str],
) -> BinaryMetrics:
    """Confusion-matrix metrics for yes/no answers, "yes" positive.

    ``predictions`` are (answer, confidence) pairs; the confidences are
    ignored here (they feed ``ece`` separately).
    """
    if len(predictions) != len(labels):
        raise VordError("length-mismatch", f"{len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise VordError("no-data", "metrics need at least one item")
    tp = fp = tn = fn = 0
    for (answer, _conf), label in zip(predictions, labels):
        if answer not in ("yes", "no") or label not in ("yes", "no"):
            raise VordError("bad-record", f"answers must be 'yes' or 'no', got {answer!r}/{label!r}")
        if answer == "yes":
            if label == "yes":
                tp += 1
            else:
                fp += 1
        else:
            if label == "no":
                tn += 1
            else:
                fn += 1
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return BinaryMetrics(
        accuracy=(tp + tn) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def answer_confidence(
    final_dist: TokenDistribution,
    yes_id: int,
    no_id: int,
) -> tuple[str, float]:
    """Reduce a decode step to a yes/no answer with a confidence.

    The two answer-token probabilities are renormalized against each other;
    the answer is the larger (ties go to "yes") and the confidence is the
    winner's share of the pair.
    """
    p_yes = float(final_dist.probs[yes_id])
    p_no = float(final_dist.probs[no_id])
    mass = p_yes + p_no
    if mass <= 0.0:
        raise VordError("no-answer-mass", "both answer tokens have zero probability")
    if p_yes >= p_no:
        return "yes", p_yes / mass
    return "no", p_no / mass
