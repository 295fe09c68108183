"""Softmax, cross-entropy loss and gradient, and the reported metrics.

Everything here is pure and stateless. Accuracy is reported in percent,
weighted F1 on [0, 1]; the overfitting gap is train minus test accuracy in
percentage points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float                # percent
    weighted_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    loss: float
    confusion: np.ndarray


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError(f"logits must be [N, n_classes], got shape {logits.shape}")
    if np.isnan(logits).any():
        raise ValueError("logits contain NaN")
    return logits


def _check_targets(targets, n: int, n_classes: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ValueError(f"targets must have shape ({n},), got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise ValueError(f"targets must lie in [0, {n_classes}), got range "
                         f"[{targets.min()}, {targets.max()}]")
    return targets.astype(np.int64)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise e^y_i / sum_k e^y_k with max-subtraction for stability."""
    logits = _check_logits(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets) -> float:
    """Mean over the batch of -log softmax(logits)[target]."""
    logits = _check_logits(logits)
    targets = _check_targets(targets, logits.shape[0], logits.shape[1])
    log_p = _log_softmax(logits)
    return float(-log_p[np.arange(len(targets)), targets].mean())


def cross_entropy_grad(logits: np.ndarray, targets) -> np.ndarray:
    """(softmax(logits) - onehot(target)) / N, the exact loss gradient."""
    logits = _check_logits(logits)
    targets = _check_targets(targets, logits.shape[0], logits.shape[1])
    grad = softmax(logits)
    grad[np.arange(len(targets)), targets] -= 1.0
    return (grad / len(targets)).astype(logits.dtype)


def predict(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    logits = _check_logits(logits)
    return logits.argmax(axis=1)


def accuracy(preds, targets) -> float:
    """100 * (#correct) / N."""
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise ValueError("cannot compute accuracy of zero samples")
    return float(100.0 * np.mean(preds == targets))


def confusion(preds, targets, n_classes: int = 4) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {targets.shape}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (targets, preds), 1)
    return cm


def per_class_prf(cm: np.ndarray):
    """(precision, recall, f1) per class; zero denominators give 0."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    precision = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    recall = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def weighted_f1(cm: np.ndarray) -> float:
    """Support-weighted mean of per-class F1 scores."""
    cm = np.asarray(cm)
    support = cm.sum(axis=1)
    total = support.sum()
    if total == 0:
        raise ValueError("confusion matrix has no samples")
    _, _, f1 = per_class_prf(cm)
    return float((support * f1).sum() / total)


def overfitting_gap(train_acc: float, test_acc: float) -> float:
    """Train accuracy minus test accuracy, in percentage points."""
    return train_acc - test_acc


def report(logits: np.ndarray, targets) -> MetricsReport:
    """Full per-dataset metrics from logits and true labels."""
    logits = _check_logits(logits)
    targets = _check_targets(targets, logits.shape[0], logits.shape[1])
    preds = predict(logits)
    cm = confusion(preds, targets, n_classes=logits.shape[1])
    precision, recall, f1 = per_class_prf(cm)
    return MetricsReport(
        accuracy=accuracy(preds, targets),
        weighted_f1=weighted_f1(cm),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        loss=cross_entropy(logits, targets),
        confusion=cm,
    )
