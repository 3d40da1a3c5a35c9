import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mint.dtdg import SplitSpec, TemporalGraph, build_temporal_graph, generate_synthetic
from mint.evaluation import (
    AGGREGATE_HEADER,
    METRICS_HEADER,
    PredictionSeries,
    aggregate,
    evaluate,
    persistence_forecast,
    write_rows,
    zero_shot_infer,
)
from mint.metrics import average_precision, rank_aggregate, rank_matrix, roc_auc, win_ratio
from mint.models import ModelConfig
from mint.training import TrainConfig, load_checkpoint, mint_train, save_checkpoint

import published_auc as pub
from conftest import events_from_counts

SMALL = ModelConfig("htgn", hidden_dim=4, decoder_hidden=4, attention_dim=3, window=3)


def oracle_auc(y, s):
    pos = [b for a, b in zip(y, s) if a == 1]
    neg = [b for a, b in zip(y, s) if a == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def oracle_ap(y, s):
    order = sorted(range(len(s)), key=lambda i: (-s[i], i))
    hits, total = 0, 0.0
    for k, i in enumerate(order, 1):
        if y[i]:
            hits += 1
            total += hits / k
    return total / hits


# --- metrics -----------------------------------------------------------------------

def test_auc_examples():
    assert roc_auc([1, 0], [0.9, 0.1]) == 1.0
    assert roc_auc([1, 0, 1, 0], [0.5] * 4) == 0.5
    assert roc_auc([1, 0, 1, 0], [0.8, 0.7, 0.6, 0.5]) == 0.75
    with pytest.raises(ValueError, match="AUC undefined"):
        roc_auc([1, 1], [0.2, 0.3])


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        s = np.round(rng.random(n), int(rng.integers(1, 4)))  # rounding creates ties
        assert abs(roc_auc(y, s) - oracle_auc(y.tolist(), s.tolist())) <= 1e-9


@given(st.lists(st.tuples(st.booleans(), st.integers(-500, 500)), min_size=2, max_size=40))
def test_auc_monotone_invariance(rows):
    y = [int(a) for a, _ in rows]
    if len(set(y)) < 2:
        y[0] = 1 - y[0]
    s = np.array([b for _, b in rows]) / 100.0  # well-separated so the transform stays strict
    assert roc_auc(y, s) == pytest.approx(roc_auc(y, np.exp(s) * 3 + 1), abs=1e-12)


def test_ap_examples_and_oracle():
    assert average_precision([1, 0, 0], [0.9, 0.5, 0.1]) == 1.0
    assert average_precision([0, 1], [0.9, 0.1]) == 0.5
    # ties keep input order: the positive at index 1 comes after index 0
    assert average_precision([0, 1], [0.5, 0.5]) == 0.5
    with pytest.raises(ValueError):
        average_precision([0, 0], [0.1, 0.2])
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        y = rng.integers(0, 2, n)
        y[rng.integers(n)] = 1
        s = np.round(rng.random(n), 1)
        assert abs(average_precision(y, s) - oracle_ap(y.tolist(), s.tolist())) <= 1e-9


def test_rank_rules():
    assert rank_aggregate([[0.6], [0.5]], ["a", "b"]) == {"a": {"avg_rank": 1.0, "top_rank": 1},
                                                          "b": {"avg_rank": 2.0, "top_rank": 0}}
    assert rank_aggregate([[0.3, 0.9]], ["solo"])["solo"]["avg_rank"] == 1.0
    tied = rank_aggregate([[0.7], [0.7], [0.1]], ["a", "b", "c"])
    assert tied["a"] == tied["b"] == {"avg_rank": 1.5, "top_rank": 1}
    with pytest.raises(ValueError):
        rank_matrix([[0.5, math.nan]])


@given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2 ** 16))
def test_rank_columns_sum(k, n, seed):
    v = np.round(np.random.default_rng(seed).random((k, n)), 1)
    assert np.allclose(rank_matrix(v).sum(0), k * (k + 1) / 2)


def test_win_ratio():
    assert win_ratio({"a": 0.9, "b": 0.8}, {"a": 0.1, "b": 0.2}) == 1.0
    assert win_ratio({"a": 0.5, "b": 0.5}, {"a": 0.5, "b": 0.5}) == 0.0
    with pytest.raises(ValueError):
        win_ratio({"a": 1.0}, {"b": 1.0})


def test_published_table_aggregation():
    methods = list(pub.METHODS)
    table = np.array(list(pub.AUC.values())).T
    ranks = rank_aggregate(table, methods)
    for m in methods:
        assert abs(ranks[m]["avg_rank"] - pub.AVG_RANK[m]) <= 0.15, m
        assert ranks[m]["top_rank"] == pub.TOP_RANK[m], m
    assert ranks["PF"]["avg_rank"] == pytest.approx(6.60)
    # frozen values under averaged ties
    assert ranks["MiNT-64 HTGN"]["avg_rank"] == pytest.approx(2.425)
    cand = dict(zip(pub.AUC, table[methods.index("MiNT-64 HTGN")]))
    ref = dict(zip(pub.AUC, table[methods.index("HTGN")]))
    assert win_ratio(cand, ref) == pub.MINT64_HTGN_WIN_RATIO == 16 / 20
    losses = sorted(k for k in cand if cand[k] <= ref[k])
    assert losses == ["ADX", "DOGE2.0", "HOICHI", "SDEX"]


# --- persistence -------------------------------------------------------------------

def _graph_from_weeks(prev, cur, extra_days=7):
    # one week at `prev` edges/day then one at `cur` edges/day, then filler
    counts = [prev] * 7 + [cur] * 7 + [1] * extra_days
    return build_temporal_graph("pf", events_from_counts(counts))


@pytest.mark.parametrize("prev,cur,expected", [(1, 2, 1.0), (2, 1, 0.0), (2, 2, 0.0)])
def test_persistence_rule(prev, cur, expected):
    g = _graph_from_weeks(prev, cur)
    g.split = None
    s = persistence_forecast(g)
    assert s.day_index[0] == 13
    assert s.probability[0] == expected


def test_persistence_skips_short_history(tiny_graph):
    s = persistence_forecast(tiny_graph, "train")
    assert s.day_index.min() >= 13
    assert set(s.probability.tolist()) <= {0.0, 1.0}


def test_persistence_uses_only_past(tiny_graph):
    base = persistence_forecast(tiny_graph)
    counts = tiny_graph.edge_counts.copy()
    t = int(base.day_index[0])
    counts[t + 1:] = 50  # rewrite the future
    g2 = build_temporal_graph("f", events_from_counts(counts))
    g2.labels, g2.split = tiny_graph.labels, tiny_graph.split
    assert persistence_forecast(g2).probability[0] == base.probability[0]


# --- zero-shot -----------------------------------------------------------------------

class AccessLog(list):
    def __init__(self, items):
        super().__init__(items)
        self.reads = []

    def __getitem__(self, i):
        self.reads.append(i)
        return super().__getitem__(i)


@pytest.fixture(scope="module")
def trained(small_graphs):
    cfg = TrainConfig.mint(model=SMALL, max_epochs=2, learning_rate=1e-3)
    ckpt, _ = mint_train(small_graphs[:2], cfg)
    return ckpt


def test_zero_shot_frozen_and_shaped(trained, small_graphs):
    g = small_graphs[2]
    before = {k: v.copy() for k, v in trained.params.items()}
    s = zero_shot_infer(trained, g)
    assert all(np.array_equal(before[k], trained.params[k]) for k in before)
    assert all(before[k].tobytes() == trained.params[k].tobytes() for k in before)
    assert len(s) == len(g.segment("test")) and np.array_equal(s.day_index, g.segment("test"))
    assert ((s.probability > 0) & (s.probability < 1)).all() and s.zero_shot


def test_zero_shot_access_pattern(trained, small_regime):
    g = generate_synthetic(2, small_regime, name="held")
    g.snapshots = AccessLog(g.snapshots)
    zero_shot_infer(trained, g)
    reads = g.snapshots.reads
    warm = g.stop("val")
    assert reads[:warm] == list(range(warm))
    assert reads[warm:] == list(g.segment("test"))


def test_zero_shot_flags_roster_member(trained, small_graphs):
    with pytest.warns(UserWarning, match="training roster"):
        s = zero_shot_infer(trained, small_graphs[0])
    assert not s.zero_shot


@pytest.mark.parametrize("arch", ["htgn", "gclstm"])
def test_zero_shot_reproduces_trainer_validation(small_graphs, arch):
    # a vanishing learning rate leaves the weights bitwise fixed during training;
    # re-splitting so the warm-up ends where training ends makes zero-shot's
    # scored days the trainer's validation days
    g = small_graphs[0]
    model = ModelConfig(arch, hidden_dim=4, decoder_hidden=4, attention_dim=3, window=3)
    ckpt, logs = mint_train([g], TrainConfig.mint(model=model, max_epochs=1, learning_rate=1e-300))
    sp = g.split
    shifted = TemporalGraph(g.name, g.snapshots, g.node_ids, g.label_params, g.labels,
                            SplitSpec(sp.train_end - 1, sp.train_end, sp.val_end))
    with pytest.warns(UserWarning):
        s = zero_shot_infer(ckpt, shifted)
    assert np.array_equal(s.day_index, g.segment("val"))
    assert np.array_equal(s.probability, logs[-1].val_predictions[g.name])


def test_zero_shot_after_checkpoint_roundtrip(trained, small_graphs, tmp_path):
    save_checkpoint(trained, tmp_path / "m.ckpt")
    a = zero_shot_infer(trained, small_graphs[2])
    b = zero_shot_infer(load_checkpoint(tmp_path / "m.ckpt"), small_graphs[2])
    assert np.array_equal(a.probability, b.probability)


def test_zero_shot_requires_labels(trained, small_graphs):
    with pytest.raises(ValueError):
        zero_shot_infer(trained, TemporalGraph("x", small_graphs[0].snapshots, small_graphs[0].node_ids))


# --- reports -----------------------------------------------------------------------

def _series(method, network, probs, labels):
    n = len(probs)
    return PredictionSeries(network, np.arange(n), np.asarray(probs, float), np.asarray(labels), method)


def test_evaluate_and_aggregate(tmp_path):
    y = [1, 0, 1, 0]
    preds = [
        _series("m", "a", [0.9, 0.1, 0.8, 0.2], y), _series("m", "b", [0.2, 0.9, 0.8, 0.1], y),
        _series("persistence", "a", [1, 1, 0, 0], y), _series("persistence", "b", [1, 0, 1, 0], y),
        _series("m", "c", [0.5, 0.5, 0.5, 0.5], [1, 1, 1, 1]),
        _series("persistence", "c", [1, 0, 1, 0], [1, 1, 1, 1]),
    ]
    rows = evaluate(preds)
    assert rows[0] == {"method": "m", "network": "a", "auc": 1.0, "ap": 1.0, "zero_shot": True}
    assert math.isnan(rows[4]["auc"])
    agg = {r["method"]: r for r in aggregate(rows)}
    assert agg["m"]["win_ratio"] == 0.5 and agg["persistence"]["win_ratio"] == 0.0
    assert agg["m"]["avg_rank"] == 1.5
    write_rows(rows, METRICS_HEADER, tmp_path / "m.csv")
    write_rows(list(agg.values()), AGGREGATE_HEADER, tmp_path / "a.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "method,network,auc,ap,zero_shot"
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "method,avg_rank,top_rank,win_ratio"


def test_prediction_csv_roundtrip(tmp_path):
    s = _series("m", "net", [0.1, 0.7, 0.30000000000000004], [0, 1, 1])
    s.write_csv(tmp_path / "net.csv")
    back = PredictionSeries.read_csv(tmp_path / "net.csv", method="m")
    assert back.network == "net" and np.array_equal(back.probability, s.probability)
    assert np.array_equal(back.label, s.label)
