import math
from collections import Counter

import numpy as np
import pytest

from mint.dtdg import LabelParams, Regime, generate_synthetic
from mint.models import HistoricalState, ModelConfig, build_model
from mint.training import (
    EPOCH_LOG_HEADER,
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    mint_train,
    save_checkpoint,
    select_best,
    shuffle_order,
    train_single,
    write_epoch_logs,
)

SMALL = ModelConfig("htgn", hidden_dim=4, decoder_hidden=4, attention_dim=3, window=3)
SMALL_LSTM = ModelConfig("gclstm", hidden_dim=4, decoder_hidden=4)


def mint_cfg(**kw):
    return TrainConfig.mint(**{"model": SMALL, "max_epochs": 3, "learning_rate": 1e-3, **kw})


class AccessLog(list):
    """List of snapshots that records every index read."""

    def __init__(self, items):
        super().__init__(items)
        self.reads = []

    def __getitem__(self, i):
        self.reads.append(i)
        return super().__getitem__(i)


def _params_equal(a, b):
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


# --- shuffling -------------------------------------------------------------------

def test_shuffle_basics():
    assert shuffle_order(1, 1, 0) == [0]
    assert shuffle_order(5, 3, 9) == shuffle_order(5, 3, 9)
    assert shuffle_order(5, 3, 9, ablate=True) == [0, 1, 2, 3, 4]
    assert sorted(shuffle_order(8, 2, 1)) == list(range(8))
    with pytest.raises(ValueError):
        shuffle_order(0, 1, 0)


def test_shuffle_seeds_differ():
    assert shuffle_order(8, 1, 0) != shuffle_order(8, 1, 1)


def test_shuffle_uniform():
    freq = Counter(tuple(shuffle_order(3, e, 7)) for e in range(1, 10001))
    assert len(freq) == 6
    assert all(abs(v / 10000 - 1 / 6) <= 0.02 for v in freq.values())


# --- selection / config ----------------------------------------------------------

def test_select_best():
    assert select_best([0.6, 0.8, 0.7]) == 1
    assert select_best([0.5, 0.9, 0.9]) == 1
    assert select_best([math.nan, 0.4]) == 1
    assert select_best([math.nan]) is None


def test_config_defaults_and_validation():
    s, m = TrainConfig.single(), TrainConfig.mint()
    assert (s.learning_rate, s.min_epochs, s.max_epochs, s.patience, s.min_delta) == (1.5e-3, 100, 250, 20, 5e-2)
    assert (m.learning_rate, m.max_epochs, m.patience, m.min_delta) == (1e-4, 300, 30, 5e-2)
    for bad in (dict(learning_rate=0), dict(patience=0), dict(min_epochs=10, max_epochs=5), dict(mode="x")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    assert TrainConfig.from_dict(m.to_dict()) == m


# --- trainer semantics -----------------------------------------------------------

def test_zero_epochs(small_graphs):
    ckpt, logs = train_single(small_graphs[0], TrainConfig.single(model=SMALL, max_epochs=0))
    assert logs == [] and ckpt.best_epoch is None
    fresh = {k: v.detach().numpy() for k, v in build_model(SMALL, 0).state_dict().items()}
    assert _params_equal(ckpt.params, fresh)


def test_stub_validator_selects_epoch_two(small_graphs):
    trace = {1: 0.6, 2: 0.8, 3: 0.7}
    ckpt, logs = mint_train(small_graphs[:2], mint_cfg(), validate=lambda e, g, y, p: trace[e])
    assert [l.mean_val_auc for l in logs] == [0.6, 0.8, 0.7]
    assert ckpt.best_epoch == 2 and ckpt.best_val_auc == 0.8


def test_best_params_are_those_of_best_epoch(small_graphs, tmp_path):
    trace = {1: 0.6, 2: 0.8, 3: 0.7}
    ck2, _ = mint_train(small_graphs[:2], mint_cfg(max_epochs=2), validate=lambda e, g, y, p: trace[e])
    ck3, _ = mint_train(small_graphs[:2], mint_cfg(max_epochs=3), validate=lambda e, g, y, p: trace[e])
    assert _params_equal(ck2.resume["params"], ck3.params)


def test_early_stopping(small_graphs):
    # no improvement beyond min_delta after epoch 1 -> stops after `patience` stale epochs
    vals = {1: 0.6, 2: 0.62, 3: 0.64, 4: 0.66, 5: 0.9, 6: 0.9}
    ckpt, logs = mint_train(small_graphs[:1], mint_cfg(max_epochs=6, patience=2),
                            validate=lambda e, g, y, p: vals[e])
    assert len(logs) == 3
    assert ckpt.best_epoch == 3


def test_min_epochs_delays_stop(small_graphs):
    cfg = TrainConfig.single(model=SMALL, max_epochs=5, min_epochs=4, patience=1, learning_rate=1e-3)
    _, logs = train_single(small_graphs[0], cfg, validate=lambda e, g, y, p: 0.5)
    assert len(logs) == 4


def test_epoch_log_mean_and_nan(small_graphs):
    vals = {"syn0": 0.5, "syn1": math.nan, "syn2": 0.9}
    _, logs = mint_train(small_graphs, mint_cfg(max_epochs=1), validate=lambda e, g, y, p: vals[g.name])
    assert logs[0].mean_val_auc == pytest.approx(0.7)
    assert set(logs[0].train_loss) == {"syn0", "syn1", "syn2"}


@pytest.mark.parametrize("model", [SMALL, SMALL_LSTM])
def test_m1_matches_single(small_graphs, model):
    kw = dict(model=model, learning_rate=2e-3, max_epochs=3, min_epochs=0, patience=30, seed=4)
    ck_s, logs_s = train_single(small_graphs[0], TrainConfig(mode="single", **kw))
    ck_m, logs_m = mint_train(small_graphs[:1], TrainConfig(mode="mint", **kw))
    assert [l.record() for l in logs_s] == [l.record() for l in logs_m]
    assert _params_equal(ck_s.params, ck_m.params) and ck_s.best_epoch == ck_m.best_epoch


def test_ablate_shuffle_fixed_order(small_graphs):
    seen = []
    mint_train(small_graphs, mint_cfg(ablate_shuffle=True),
               on_network_start=lambda e, name, st: seen.append((e, name)))
    by_epoch = [[n for e, n in seen if e == k] for k in (1, 2, 3)]
    assert by_epoch[0] == by_epoch[1] == by_epoch[2] == ["syn0", "syn1", "syn2"]


def test_shuffle_changes_order(small_graphs):
    seen = []
    mint_train(small_graphs, mint_cfg(max_epochs=6),
               on_network_start=lambda e, name, st: seen.append((e, name)))
    orders = {tuple(n for e, n in seen if e == k) for k in range(1, 7)}
    assert len(orders) > 1


def _state_norm(st):
    return float(st.current.norm()) if isinstance(st, HistoricalState) else float(st.h.norm())


@pytest.mark.parametrize("model", [SMALL, SMALL_LSTM])
def test_context_switch(small_graphs, model):
    starts = []
    mint_train(small_graphs, mint_cfg(model=model, max_epochs=2),
               on_network_start=lambda e, n, st: starts.append(_state_norm(st)))
    assert all(s == 0.0 for s in starts)

    starts = []
    mint_train(small_graphs, mint_cfg(model=model, max_epochs=2, ablate_context_switch=True),
               on_network_start=lambda e, n, st: starts.append(_state_norm(st)))
    assert starts[0] == 0.0 and all(s > 0 for s in starts[1:])


def test_context_switch_resizes_state():
    a = generate_synthetic(1, Regime(days=40, base_intensity=6, node_pool=8, churn=0.0), name="a")
    b = generate_synthetic(2, Regime(days=40, base_intensity=6, node_pool=15, churn=0.0), name="b")
    sizes = []
    mint_train([a, b], mint_cfg(ablate_shuffle=True, ablate_context_switch=True, max_epochs=1),
               on_network_start=lambda e, n, st: sizes.append(st.node_count))
    assert sizes == [a.node_count, b.node_count]


def test_deterministic_checkpoints(small_graphs, tmp_path):
    for k in range(2):
        ckpt, logs = mint_train(small_graphs[:2], mint_cfg(seed=11))
        save_checkpoint(ckpt, tmp_path / f"{k}.ckpt")
        write_epoch_logs(logs, tmp_path / f"{k}.csv")
    assert (tmp_path / "0.ckpt").read_bytes() == (tmp_path / "1.ckpt").read_bytes()
    strip = lambda p: [r.rsplit(",", 1)[0] for r in p.read_text().splitlines()]  # noqa: E731
    assert strip(tmp_path / "0.csv") == strip(tmp_path / "1.csv")


def test_training_reduces_loss():
    g = generate_synthetic(5, Regime(days=84, base_intensity=20, node_pool=25, churn=0.02))
    cfg = TrainConfig.single(model=SMALL_LSTM, learning_rate=5e-3, max_epochs=50, min_epochs=50)
    _, logs = train_single(g, cfg)
    first, last = logs[0].train_loss[g.name], logs[-1].train_loss[g.name]
    assert last < first


def test_rejects_unlabelled_and_empty(small_graphs):
    from mint.dtdg import TemporalGraph
    bare = TemporalGraph("bare", small_graphs[0].snapshots, small_graphs[0].node_ids)
    with pytest.raises(ValueError):
        train_single(bare, TrainConfig.single(model=SMALL, max_epochs=1))
    with pytest.raises(ValueError):
        mint_train([], mint_cfg())
    with pytest.raises(ValueError):
        train_single(small_graphs[0], mint_cfg())


def test_rejects_mixed_label_params(small_regime):
    a = generate_synthetic(0, small_regime, name="a")
    b = generate_synthetic(1, small_regime, LabelParams(7, 3, 10), name="b")
    with pytest.raises(ValueError):
        mint_train([a, b], mint_cfg())


def test_no_test_snapshot_touched(small_graphs):
    graphs = []
    for g in small_graphs:
        g = generate_synthetic(int(g.name[3:]), Regime(days=60, base_intensity=8, node_pool=14, churn=0.05),
                               name=g.name)
        g.snapshots = AccessLog(g.snapshots)
        graphs.append(g)
    mint_train(graphs, mint_cfg(max_epochs=2))
    for g in graphs:
        assert g.snapshots.reads and max(g.snapshots.reads) < g.stop("val")


# --- checkpoints -----------------------------------------------------------------

@pytest.mark.parametrize("model", [SMALL, SMALL_LSTM])
def test_checkpoint_roundtrip(small_graphs, tmp_path, model):
    ckpt, _ = mint_train(small_graphs[:2], mint_cfg(model=model, max_epochs=2))
    ckpt.method = "mint-2"
    path = save_checkpoint(ckpt, tmp_path / "m.ckpt")
    back = load_checkpoint(path)
    assert _params_equal(back.params, ckpt.params)
    assert back.train_config == ckpt.train_config and back.roster == ["syn0", "syn1"]
    assert back.best_epoch == ckpt.best_epoch and back.history == ckpt.history and back.method == "mint-2"
    assert _params_equal(back.resume["params"], ckpt.resume["params"])
    model_ = back.build()
    assert all(np.array_equal(v.numpy(), ckpt.params[k]) for k, v in model_.state_dict().items())


def test_checkpoint_errors(small_graphs, tmp_path):
    ckpt, _ = mint_train(small_graphs[:1], mint_cfg(model=SMALL_LSTM, max_epochs=1))
    save_checkpoint(ckpt, tmp_path / "g.ckpt")
    with pytest.raises(CheckpointError, match="expected htgn"):
        load_checkpoint(tmp_path / "g.ckpt", architecture="htgn")
    (tmp_path / "bad.ckpt").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    import json
    import zipfile
    with zipfile.ZipFile(tmp_path / "v.ckpt", "w") as zf:
        zf.writestr("meta.json", json.dumps({"format_version": 99}))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")
    with pytest.raises(CheckpointError):
        mint_train(small_graphs[:1], mint_cfg(), resume=load_checkpoint(tmp_path / "g.ckpt"))


@pytest.mark.parametrize("model,ablate", [(SMALL, False), (SMALL_LSTM, True)])
def test_resume_equivalence(small_graphs, tmp_path, model, ablate):
    cfg = mint_cfg(model=model, max_epochs=4, ablate_context_switch=ablate)
    full, full_logs = mint_train(small_graphs[:2], cfg)
    mint_train(small_graphs[:2], cfg, checkpoint_path=tmp_path / "part.ckpt", stop_after=2,
               log_path=tmp_path / "log.csv")
    part = load_checkpoint(tmp_path / "part.ckpt")
    assert part.resume["epochs_done"] == 2
    resumed, logs = mint_train(small_graphs[:2], cfg, resume=part, log_path=tmp_path / "log.csv")
    assert [l.epoch for l in logs] == [3, 4]
    assert [l.record() for l in logs] == [l.record() for l in full_logs[2:]]
    assert _params_equal(resumed.params, full.params) and resumed.history == full.history
    rows = (tmp_path / "log.csv").read_text().splitlines()
    assert rows[0] == ",".join(EPOCH_LOG_HEADER) and len(rows) == 1 + 4 * 2
