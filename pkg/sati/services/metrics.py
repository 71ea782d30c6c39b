"""Sentiment evaluation metrics on the [-3, 3] scale."""
from __future__ import annotations

import math
from typing import Any, Optional

import numpy as np
from sklearn.metrics import f1_score

from sati.errors import ContractError, DimensionError
from sati.schemas import MetricsReport, TotalLossBreakdown


def seven_class(values: np.ndarray) -> np.ndarray:
    """Nearest integer of the clipped score, in ``{-3, ..., 3}``."""

    return np.round(np.clip(values, -3.0, 3.0)).astype(np.int64)


def _accuracy(truth: np.ndarray, guess: np.ndarray) -> float:
    return math.fsum((truth == guess).astype(np.float64)) / truth.size


def _weighted_f1(truth: np.ndarray, guess: np.ndarray) -> float:
    return float(f1_score(truth, guess, average="weighted", zero_division=0))


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation with exactly rounded sums; ``0`` when either side is constant."""

    n = x.size
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    dx, dy = x - mx, y - my
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    value = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, value))


def compute_metrics(
    predictions: np.ndarray,
    labels: np.ndarray,
    *,
    loss: Optional[TotalLossBreakdown] = None,
    config: Optional[dict[str, Any]] = None,
    wall_clock_s: float = 0.0,
) -> MetricsReport:
    """Acc-2 and F1 in both variants, Acc-7, MAE and Pearson correlation.

    The non-negative variant counts zero labels as non-negative; the positive
    variant drops zero-label samples and is ``None`` when none remain.
    """

    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise DimensionError("compute_metrics", predictions.shape, labels.shape)
    if labels.size == 0:
        raise ContractError("cannot evaluate an empty dataset")

    truth_nonneg, guess_nonneg = labels >= 0, predictions >= 0
    nonzero = labels != 0
    acc2_pos = f1_pos = None
    if nonzero.any():
        truth_pos, guess_pos = labels[nonzero] > 0, predictions[nonzero] > 0
        acc2_pos = _accuracy(truth_pos, guess_pos)
        f1_pos = _weighted_f1(truth_pos, guess_pos)

    return MetricsReport(
        acc2_nonneg=_accuracy(truth_nonneg, guess_nonneg),
        acc2_pos=acc2_pos,
        f1_nonneg=_weighted_f1(truth_nonneg, guess_nonneg),
        f1_pos=f1_pos,
        acc7=_accuracy(seven_class(labels), seven_class(predictions)),
        mae=math.fsum(np.abs(predictions - labels)) / labels.size,
        corr=pearson(predictions, labels),
        n_samples=int(labels.size),
        loss=loss,
        config=config,
        wall_clock_s=wall_clock_s,
    )
