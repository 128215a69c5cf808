"""Binary classification metrics (positive class = hallucinated) and a throughput bench."""

from __future__ import annotations

import math
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    pred = np.asarray(predictions).astype(bool)
    true = np.asarray(labels).astype(bool)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"predictions and labels differ in length: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("need at least one example")
    return ConfusionCounts(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def precision_recall(c: ConfusionCounts) -> tuple[float, float]:
    return _ratio(c.tp, c.tp + c.fp), _ratio(c.tp, c.tp + c.fn)


def balanced_accuracy(c: ConfusionCounts) -> float:
    return (_ratio(c.tp, c.tp + c.fn) + _ratio(c.tn, c.tn + c.fp)) / 2


def mcc(c: ConfusionCounts) -> float:
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    # exact integer numerator and radicand
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(math.prod(factors))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) for each distinct score, highest threshold first."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    points = [(math.inf, 0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        pred = s >= t
        points.append((float(t), _ratio(int(np.sum(pred & ~y)), n_neg), _ratio(int(np.sum(pred & y)), n_pos)))
    return points


def roc_curve_csv(points) -> str:
    lines = ["threshold,fpr,tpr"] + [f"{t},{f},{r}" for t, f, r in points]
    return "\n".join(lines) + "\n"


@dataclass
class MetricsReport:
    precision: float
    recall: float
    balanced_accuracy: float
    mcc: float
    roc_auc: float | None
    counts: ConfusionCounts
    latency_samples_per_sec: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = asdict(self.counts)
        return d


def evaluate(labels: Sequence[int], scores: Sequence[float] | None = None, predictions=None, threshold: float = 0.5) -> MetricsReport:
    """Build a report from scores (thresholded at ``>= threshold``) or hard predictions.

    ``roc_auc`` is None when no scores are given or only one class is present.
    """
    labels = np.asarray(labels).astype(int)
    if predictions is None:
        if scores is None:
            raise ValueError("need scores or predictions")
        predictions = (np.asarray(scores) >= threshold).astype(int)
    c = confusion(predictions, labels)
    p, r = precision_recall(c)
    auc = None
    if scores is not None and 0 < labels.sum() < len(labels):
        auc = roc_auc(scores, labels)
    return MetricsReport(p, r, balanced_accuracy(c), mcc(c), auc, c)


def latency_bench(
    predict: Callable[[list], object],
    dataset: Sequence,
    batch_size: int = 4,
    warmup_iters: int = 1,
    timed_iters: int = 3,
) -> dict:
    """Inference throughput in samples per second (higher is faster).

    One iteration runs ``predict`` over the whole dataset in batches of
    ``batch_size``; the report gives mean and standard deviation across the
    timed iterations plus a description of the host.
    """
    if len(dataset) < batch_size:
        raise ValueError("dataset is smaller than one batch")
    if timed_iters < 1:
        raise ValueError("timed_iters must be at least 1")
    n = len(dataset) - len(dataset) % batch_size
    batches = [list(dataset[i : i + batch_size]) for i in range(0, n, batch_size)]

    def run():
        for b in batches:
            predict(b)

    for _ in range(warmup_iters):
        run()
    rates = []
    for _ in range(timed_iters):
        t0 = time.perf_counter()
        run()
        rates.append(n / (time.perf_counter() - t0))
    return {
        "samples_per_sec": statistics.fmean(rates),
        "samples_per_sec_std": statistics.stdev(rates) if len(rates) > 1 else 0.0,
        "per_iteration": rates,
        "batch_size": batch_size,
        "samples_per_iteration": n,
        "warmup_iters": warmup_iters,
        "timed_iters": timed_iters,
        "host": {
            "platform": platform.platform(),
            "processor": platform.processor() or platform.machine(),
            "cpu_count": os.cpu_count(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
