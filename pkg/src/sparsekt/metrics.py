"""ROC-AUC and accuracy over flattened (prediction, label) pairs."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedMetric(ValueError):
    """AUC requested for labels of a single class."""


def auc(predictions, labels) -> float:
    """Mann-Whitney AUC with average ranks for tied predictions."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if predictions.shape != labels.shape or predictions.size == 0:
        raise ValueError("predictions and labels must be non-empty and equally long")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both positive and negative labels")
    ranks = rankdata(predictions, method="average")
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(predictions, labels, threshold: float = 0.5) -> float:
    predictions = np.asarray(predictions, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean((predictions >= threshold) == labels))


def safe_auc(predictions, labels) -> float | None:
    try:
        return auc(predictions, labels)
    except UndefinedMetric:
        return None
