"""Minority-class F1, Mann-Whitney AUC and per-fold aggregation."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass
class FoldResult:
    fold_index: int
    f1: float
    auc: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    error: str = ""
    train_seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    config: dict
    folds: list[FoldResult]
    f1_mean: float
    f1_std: float
    auc_mean: float
    auc_std: float
    auc_pooled: float = float("nan")
    errors: list[str] = field(default_factory=list)


def _labels(x, name: str) -> np.ndarray:
    arr = np.asarray(x).astype(int).reshape(-1)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ContractError(f"{name} must contain only 0 and 1")
    return arr


def confusion(pred_labels, true_labels) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) with pain (1) as the positive class."""
    pred, true = _labels(pred_labels, "pred_labels"), _labels(true_labels, "true_labels")
    if pred.size == 0:
        raise ContractError("metrics need at least one sample")
    if pred.shape != true.shape:
        raise ContractError(f"length mismatch: {pred.size} predictions vs {true.size} labels")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    return tp, fp, fn, tn


def f1_minority(pred_labels, true_labels) -> tuple[float, float, float, tuple[int, int, int, int]]:
    """F1, precision, recall and confusion counts for the pain class.

    Any ratio with a zero denominator is reported as 0.
    """
    tp, fp, fn, tn = confusion(pred_labels, true_labels)
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return f1, precision, recall, (tp, fp, fn, tn)


def auc(scores, true_labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    true = _labels(true_labels, "true_labels")
    if scores.shape != true.shape:
        raise ContractError(f"length mismatch: {scores.size} scores vs {true.size} labels")
    pos, neg = scores[true == 1], np.sort(scores[true == 0])
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    below = np.searchsorted(neg, pos, side="left")
    at_or_below = np.searchsorted(neg, pos, side="right")
    # twice the Mann-Whitney U, kept integral so the ratio is exact
    twice_u = int(np.sum(below + at_or_below))
    return twice_u / (2 * pos.size * neg.size)


def evaluate_fold(fold_index: int, pain_probs, pred_labels, true_labels) -> FoldResult:
    f1, precision, recall, (tp, fp, fn, tn) = f1_minority(pred_labels, true_labels)
    error = ""
    try:
        auc_value = auc(pain_probs, true_labels)
    except UndefinedMetricError as exc:
        auc_value = float("nan")
        error = str(exc)
    return FoldResult(fold_index, f1, auc_value, precision, recall, tp, fp, fn, tn, error)


def mean_std(values) -> tuple[float, float]:
    """Mean and population (1/N) standard deviation, both correctly rounded."""
    vals = [float(v) for v in values]
    return statistics.mean(vals), statistics.pstdev(vals)


def aggregate(fold_results: list[FoldResult], config: dict | None = None,
              pooled_scores=None, pooled_labels=None) -> RunReport:
    if len(fold_results) < 2:
        raise ContractError(f"aggregate needs at least 2 folds, got {len(fold_results)}")
    f1_mean, f1_std = mean_std([r.f1 for r in fold_results])
    aucs = [r.auc for r in fold_results if np.isfinite(r.auc)]
    auc_mean, auc_std = mean_std(aucs) if aucs else (float("nan"), float("nan"))
    pooled = float("nan")
    if pooled_scores is not None and pooled_labels is not None:
        try:
            pooled = auc(pooled_scores, pooled_labels)
        except UndefinedMetricError:
            pass
    errors = [f"fold {r.fold_index}: {r.error}" for r in fold_results if r.error]
    return RunReport(dict(config or {}), list(fold_results), f1_mean, f1_std, auc_mean, auc_std, pooled, errors)
