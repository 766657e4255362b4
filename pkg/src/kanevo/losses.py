"""Losses on raw class scores and classification metrics."""

from __future__ import annotations

import numpy as np

LOSS_KINDS = ("cross_entropy", "mse")


def _check_kind(loss_kind: str) -> str:
    kind = loss_kind.replace("-", "_").lower()
    if kind in ("ce", "crossentropy"):
        kind = "cross_entropy"
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")
    return kind


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def _as_labels(targets, n_classes: int) -> np.ndarray:
    labels = np.asarray(targets)
    if labels.ndim != 1:
        raise ValueError("cross-entropy targets must be a 1-D array of class ids")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValueError("cross-entropy targets must be integer class ids")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return labels


def _as_regression(targets, scores: np.ndarray) -> np.ndarray:
    t = np.asarray(targets, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape != scores.shape:
        raise ValueError(f"target shape {t.shape} does not match score shape {scores.shape}")
    return t


def loss_and_grad(scores, targets, loss_kind: str = "cross_entropy") -> tuple[float, np.ndarray]:
    """Mean loss over samples and its gradient with respect to ``scores``."""
    kind = _check_kind(loss_kind)
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if kind == "cross_entropy":
        labels = _as_labels(targets, scores.shape[1])
        if labels.shape[0] != n:
            raise ValueError("scores and labels disagree on sample count")
        logp = log_softmax(scores)
        rows = np.arange(n)
        value = 0.0 - logp[rows, labels].mean()
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return float(value), grad / n
    t = _as_regression(targets, scores)
    diff = scores - t
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss(scores, targets, loss_kind: str = "cross_entropy") -> float:
    """Cross-entropy (mean of -log softmax at the label) or mean squared error."""
    kind = _check_kind(loss_kind)
    scores = np.asarray(scores, dtype=float)
    if kind == "cross_entropy":
        labels = _as_labels(targets, scores.shape[1])
        logp = log_softmax(scores)
        return float(0.0 - logp[np.arange(scores.shape[0]), labels].mean())
    t = _as_regression(targets, scores)
    return float(np.mean((scores - t) ** 2))


def accuracy(scores, labels) -> float:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    pred = np.argmax(np.asarray(scores), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def roc_auc(scores, labels) -> float:
    """Rank-based ROC area; tied scores count half (midranks)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    # Mann-Whitney U; pos_rank_sum - n_pos(n_pos+1)/2 is an exact half-integer
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def metrics(scores, labels) -> dict:
    """Accuracy for any class count, plus AUC when there are exactly two classes."""
    scores = np.asarray(scores, dtype=float)
    out = {"accuracy": accuracy(scores, labels), "auc": None}
    if scores.shape[1] == 2:
        # z1 - z0 is a strictly increasing function of softmax(z)[:, 1], so the
        # ranking (and the AUC) is identical, without saturation ties at p = 1.
        out["auc"] = roc_auc(scores[:, 1] - scores[:, 0], labels)
    return out
