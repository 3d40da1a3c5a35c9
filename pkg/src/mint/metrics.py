"""Classification metrics and cross-method rank aggregation."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata


def roc_auc(labels, scores) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("labels and scores differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(labels, scores) -> float:
    """Mean of the precision at each positive, scanning scores high to low.

    Equal scores keep their original order.
    """
    y = np.asarray(labels).astype(bool)
    s = np.asarray(scores, dtype=np.float64)
    if not y.any():
        raise ValueError("average precision undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].sum() / hits.sum())


def rank_matrix(values) -> np.ndarray:
    """Per-column ranks of a (methods x networks) matrix; 1 = highest, ties averaged."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("expected a methods x networks matrix")
    if np.isnan(v).any():
        raise ValueError("rank table has missing cells")
    return np.column_stack([rankdata(-v[:, j], method="average") for j in range(v.shape[1])]) \
        if v.shape[1] else np.empty_like(v)


def rank_aggregate(values, methods: Sequence[str] | None = None) -> dict:
    """Average rank and top-rank count per method.

    ``values`` is a methods x networks matrix of a higher-is-better metric.
    Methods tied for first on a network each get a top-rank credit.
    """
    ranks = rank_matrix(values)
    names = list(methods) if methods is not None else list(range(ranks.shape[0]))
    if len(names) != ranks.shape[0]:
        raise ValueError("method names do not match table rows")
    avg = ranks.mean(axis=1)
    top = (ranks == ranks.min(axis=0, keepdims=True)).sum(axis=1) if ranks.size else np.zeros(len(names))
    return {m: {"avg_rank": float(a), "top_rank": int(t)} for m, a, t in zip(names, avg, top)}


def win_ratio(candidate: Mapping[str, float], reference: Mapping[str, float]) -> float:
    """Fraction of networks where ``candidate`` strictly beats ``reference``."""
    if set(candidate) != set(reference):
        raise ValueError("candidate and reference cover different networks")
    if not candidate:
        raise ValueError("no networks to compare")
    return sum(1 for k in candidate if candidate[k] > reference[k]) / len(candidate)
