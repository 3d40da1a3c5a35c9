"""Zero-shot inference, the persistence baseline and evaluation reports."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .dtdg import TemporalGraph
from .metrics import average_precision, rank_aggregate, roc_auc, win_ratio
from .training import InputCache, ModelCheckpoint, forward_range

log = logging.getLogger(__name__)

METRICS_HEADER = ("method", "network", "auc", "ap", "zero_shot")
AGGREGATE_HEADER = ("method", "avg_rank", "top_rank", "win_ratio")
PREDICTIONS_HEADER = ("day_index", "probability", "label")
PERSISTENCE = "persistence"


@dataclass
class PredictionSeries:
    network: str
    day_index: np.ndarray
    probability: np.ndarray
    label: np.ndarray
    method: str = ""
    zero_shot: bool = True

    def __len__(self) -> int:
        return len(self.day_index)

    def auc(self) -> float:
        return roc_auc(self.label, self.probability)

    def ap(self) -> float:
        return average_precision(self.label, self.probability)

    def write_csv(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PREDICTIONS_HEADER)
            for d, p, y in zip(self.day_index.tolist(), self.probability.tolist(), self.label.tolist()):
                writer.writerow([d, repr(p), y])

    @classmethod
    def read_csv(cls, path: str | Path, network: str | None = None, method: str = "",
                 zero_shot: bool = True) -> "PredictionSeries":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(network or Path(path).stem, data[:, 0].astype(np.int64), data[:, 1],
                   data[:, 2].astype(np.int64), method, zero_shot)


def zero_shot_infer(ckpt: ModelCheckpoint, g: TemporalGraph, cache: InputCache | None = None) -> PredictionSeries:
    """Predict ``g``'s test days with frozen pre-trained weights.

    A fresh historical state is warmed up by one gradient-free pass over the
    train and validation snapshots; the test snapshots are then scored in
    order. Weights are never updated.
    """
    if g.labels is None or g.split is None:
        raise ValueError(f"{g.name}: graph must be labelled and split")
    in_roster = g.name in ckpt.roster
    if in_roster:
        warnings.warn(f"{g.name} is in the checkpoint's training roster; this is not zero-shot", stacklevel=2)
    model = ckpt.build()
    for p in model.parameters():
        p.requires_grad_(False)
    cache = cache or InputCache()
    state = model.init_state(g.node_count)
    warm_stop, test_stop = g.stop("val"), g.stop("test")
    _, state = forward_range(model, g, state, 0, warm_stop, cache)
    probs, _ = forward_range(model, g, state, warm_stop, test_stop, cache)
    days = g.segment("test")
    return PredictionSeries(g.name, days, probs, g.labels[days].astype(np.int64), ckpt.method,
                            zero_shot=not in_roster)


def persistence_forecast(g: TemporalGraph, segment: str = "test") -> PredictionSeries:
    """Predict growth when this week's edge count beats last week's.

    Uses only counts at or before the prediction day. Days without two full
    weeks of history are skipped.
    """
    n = g.label_params.n if g.label_params is not None else 7
    counts = g.edge_counts
    csum = np.concatenate([[0], np.cumsum(counts)])
    days = g.segment(segment) if g.split is not None else g.labeled_days
    days = days[days >= 2 * n - 1]
    current = csum[days + 1] - csum[days + 1 - n]
    previous = csum[days + 1 - n] - csum[days + 1 - 2 * n]
    probs = (current > previous).astype(np.float64)
    return PredictionSeries(g.name, days, probs, g.labels[days].astype(np.int64), PERSISTENCE)


def _safe(metric, series: PredictionSeries) -> float:
    try:
        return metric(series)
    except ValueError:
        return float("nan")


def evaluate(predictions: Sequence[PredictionSeries]) -> list[dict]:
    """Per (method, network) AUC and AP; undefined metrics are NaN."""
    return [{"method": s.method, "network": s.network, "auc": _safe(PredictionSeries.auc, s),
             "ap": _safe(PredictionSeries.ap, s), "zero_shot": s.zero_shot} for s in predictions]


def metric_table(rows: Sequence[Mapping], metric: str = "auc") -> tuple[list[str], list[str], np.ndarray]:
    """Pivot metric rows to (methods, networks, methods x networks matrix)."""
    methods = sorted({r["method"] for r in rows})
    networks = sorted({r["network"] for r in rows})
    table = np.full((len(methods), len(networks)), np.nan)
    for r in rows:
        table[methods.index(r["method"]), networks.index(r["network"])] = r[metric]
    return methods, networks, table


def aggregate(rows: Sequence[Mapping], reference: str | None = PERSISTENCE, metric: str = "auc") -> list[dict]:
    """Average rank, top rank and win ratio (vs ``reference``) per method.

    Networks with a missing or undefined metric for any method are dropped
    from the comparison.
    """
    methods, networks, table = metric_table(rows, metric)
    keep = ~np.isnan(table).any(axis=0)
    if not keep.all():
        dropped = [n for n, k in zip(networks, keep) if not k]
        log.warning("dropping networks with undefined %s: %s", metric, dropped)
    networks = [n for n, k in zip(networks, keep) if k]
    table = table[:, keep]
    if not networks:
        raise ValueError("no network has a defined metric for every method")
    ranks = rank_aggregate(table, methods)
    out = []
    for i, m in enumerate(methods):
        wr = float("nan")
        if reference in methods:
            ref = dict(zip(networks, table[methods.index(reference)]))
            wr = win_ratio(dict(zip(networks, table[i])), ref)
        out.append({"method": m, **ranks[m], "win_ratio": wr})
    return out


def _cell(v):
    # repr keeps floats round-trippable; numpy scalars would otherwise print as np.float64(...)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_rows(rows: Sequence[Mapping], header: Sequence[str], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _cell(v) for k, v in r.items()})
