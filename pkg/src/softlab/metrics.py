"""Evaluation metrics: macro accuracy, mean KL divergence and ECE.

All functions accept either lists of ``SoftLabel`` or ``(n, k)`` arrays of
probability rows. An item's class is the argmax of its distribution, with
ties resolved to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .labels import SoftLabel

KL_FLOOR = 1e-12
REPORT_HEADER = ("run_id", "seed", "label_mode", "macro_acc", "mean_kl", "ece", "n_items")


def _as_matrix(rows) -> np.ndarray:
    if len(rows) and isinstance(rows[0], SoftLabel):
        rows = [r.probs for r in rows]
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2:
        raise ValidationError(f"expected an (n, k) matrix, got shape {mat.shape}")
    return mat


def _pair(predictions, truths) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = _as_matrix(predictions), _as_matrix(truths)
    if pred.shape != truth.shape:
        raise ValidationError(f"shape mismatch: predictions {pred.shape} vs truths {truth.shape}")
    if len(pred) == 0:
        raise ValidationError("empty input")
    return pred, truth


def macro_accuracy(predictions, truths) -> tuple[float, np.ndarray]:
    """Unweighted mean of per-class recall.

    Returns ``(macro_acc, per_class_recall)``; classes without any true
    member get ``nan`` recall and are left out of the mean.
    """
    pred, truth = _pair(predictions, truths)
    k = truth.shape[1]
    true_cls = np.argmax(truth, axis=1)
    hit = np.argmax(pred, axis=1) == true_cls
    sizes = np.bincount(true_cls, minlength=k)
    correct = np.bincount(true_cls, weights=hit, minlength=k)
    recall = np.full(k, np.nan)
    present = sizes > 0
    recall[present] = correct[present] / sizes[present]
    return float(recall[present].mean()), recall


def accuracy(predictions, truths) -> float:
    pred, truth = _pair(predictions, truths)
    return float(np.mean(np.argmax(pred, axis=1) == np.argmax(truth, axis=1)))


def kl_rows(truths, predictions) -> np.ndarray:
    """Per-item KL(truth || prediction) in nats, predictions floored at 1e-12."""
    pred, truth = _pair(predictions, truths)
    p = np.maximum(pred, KL_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(truth > 0, truth * (np.log(truth) - np.log(p)), 0.0)
    return terms.sum(axis=1)


def mean_kl(truths, predictions) -> float:
    return float(kl_rows(truths, predictions).mean())


def expected_calibration_error(predictions, truths, n_bins: int = 10) -> float:
    """Binned gap between top-class confidence and accuracy.

    Bins split ``(1/k, 1]`` into ``n_bins`` equal-width intervals; a
    confidence of exactly ``1/k`` falls into the first bin.
    """
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    pred, truth = _pair(predictions, truths)
    k = pred.shape[1]
    conf = pred.max(axis=1)
    correct = (np.argmax(pred, axis=1) == np.argmax(truth, axis=1)).astype(np.float64)
    lo = 1.0 / k
    width = (1.0 - lo) / n_bins
    bins = np.clip(np.ceil((conf - lo) / width).astype(np.int64) - 1, 0, n_bins - 1)
    n = len(conf)
    counts = np.bincount(bins, minlength=n_bins)
    acc_sum = np.bincount(bins, weights=correct, minlength=n_bins)
    conf_sum = np.bincount(bins, weights=conf, minlength=n_bins)
    used = counts > 0
    gaps = np.abs(acc_sum[used] - conf_sum[used]) / counts[used]
    ece = float(np.sum(counts[used] / n * gaps))
    return min(max(ece, 0.0), 1.0)


@dataclass(frozen=True)
class EvalReport:
    macro_acc: float
    mean_kl: float
    ece: float
    per_class_recall: tuple[float, ...]
    n_items: int

    def row(self, run_id: str, seed: int, label_mode: str) -> tuple[str, ...]:
        return (
            run_id,
            str(seed),
            label_mode,
            f"{self.macro_acc:.6f}",
            f"{self.mean_kl:.6f}",
            f"{self.ece:.6f}",
            str(self.n_items),
        )


def evaluate(predictions, truths, n_bins: int = 10) -> EvalReport:
    macro, recall = macro_accuracy(predictions, truths)
    return EvalReport(
        macro_acc=macro,
        mean_kl=mean_kl(truths, predictions),
        ece=expected_calibration_error(predictions, truths, n_bins),
        per_class_recall=tuple(float(r) for r in recall),
        n_items=len(_as_matrix(truths)),
    )


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation (zero for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
