"""Ranking metrics and prior-based task loss weights."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DimensionError, UndefinedMetricError


def evaluate_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count half.

    Rank-based computation, exactly equivalent to exhaustive pair counting.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if s.size != y.size:
        raise DimensionError(f"{s.size} scores vs {y.size} labels")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("labels must be binary 0/1")
    n_pos = int(np.sum(y))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    # Sum of positive ranks minus its minimum possible value, over pair count.
    return float((np.sum(ranks[y == 1.0]) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate_gauc(scores, labels, group_ids) -> float:
    """Group-size-weighted mean AUC over groups containing both classes.

    Single-class groups are excluded from both numerator and denominator.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    g = np.asarray(group_ids).ravel()
    if not (s.size == y.size == g.size):
        raise DimensionError(f"sizes differ: {s.size} scores, {y.size} labels, {g.size} groups")
    aucs = []
    sizes = []
    for group in np.unique(g):
        mask = g == group
        y_g = y[mask]
        if y_g.min() == y_g.max():
            continue  # single-class group carries no ranking signal
        aucs.append(evaluate_auc(s[mask], y_g))
        sizes.append(float(mask.sum()))
    if not sizes:
        raise UndefinedMetricError("no group contains both classes")
    weights = np.asarray(sizes) / np.sum(sizes)
    return float(np.dot(weights, aucs))


def loss_weights_from_prior(labels) -> np.ndarray:
    """Task weights inversely proportional to label entropy, summing to T.

    Sparse tasks (low-entropy labels) get large weights. ``labels`` is the
    (n, T) label matrix or a dataset exposing one.
    """
    y = np.asarray(getattr(labels, "labels", labels), dtype=np.float64)
    if y.ndim != 2:
        raise DimensionError("expected an (n, T) label matrix")
    rates = y.mean(axis=0)
    if np.any(rates == 0.0) or np.any(rates == 1.0):
        bad = int(np.argmax((rates == 0.0) | (rates == 1.0)))
        raise DataError(f"task {bad} has a single label class; its entropy is zero")
    entropy = -(rates * np.log(rates) + (1.0 - rates) * np.log(1.0 - rates))
    raw = 1.0 / entropy
    return raw * (y.shape[1] / raw.sum())
