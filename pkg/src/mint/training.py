"""Single-network and multi-network (MiNT) training with checkpointing."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .dtdg import LabelParams, TemporalGraph
from .metrics import roc_auc
from .models import (
    DTYPE, HistoricalState, LSTMState, ModelConfig, SnapshotInputs, bce_loss, build_model, reset_context,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
EPOCH_LOG_HEADER = ("epoch", "network", "train_loss", "val_auc", "mean_val_auc", "seconds")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "mint"                # single | mint
    learning_rate: float = 1e-4
    max_epochs: int = 300
    min_epochs: int = 0
    patience: int = 30
    min_delta: float = 5e-2
    seed: int = 0
    ablate_shuffle: bool = False
    ablate_context_switch: bool = False
    model: ModelConfig = ModelConfig()
    label_params: LabelParams = LabelParams()

    def __post_init__(self):
        if self.mode not in ("single", "mint"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.min_epochs > self.max_epochs and self.max_epochs > 0:
            raise ValueError("min_epochs exceeds max_epochs")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    @classmethod
    def single(cls, **overrides) -> "TrainConfig":
        """Single-network defaults: lr 1.5e-3, 100-250 epochs, patience 20."""
        base = dict(mode="single", learning_rate=1.5e-3, max_epochs=250, min_epochs=100, patience=20)
        return cls(**{**base, **overrides})

    @classmethod
    def mint(cls, **overrides) -> "TrainConfig":
        """Multi-network defaults: lr 1e-4, 300 epochs, patience 30."""
        base = dict(mode="mint", learning_rate=1e-4, max_epochs=300, min_epochs=0, patience=30)
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig(**d.get("model", {}))
        d["label_params"] = LabelParams(**d.get("label_params", {}))
        return cls(**d)


@dataclass
class EpochLog:
    epoch: int
    train_loss: dict
    val_auc: dict
    mean_val_auc: float
    seconds: float = 0.0
    val_predictions: dict = field(default_factory=dict, repr=False)

    def rows(self):
        for name in self.train_loss:
            yield (self.epoch, name, self.train_loss[name], self.val_auc[name], self.mean_val_auc, self.seconds)

    def record(self) -> dict:
        """Deterministic part of the log (no wall time) kept in checkpoints."""
        return {"epoch": self.epoch, "train_loss": self.train_loss, "val_auc": self.val_auc,
                "mean_val_auc": self.mean_val_auc}


def method_name(cfg: TrainConfig, m: int) -> str:
    """Report label for a trained model, e.g. ``single-htgn`` or ``mint-8-gclstm``."""
    arch = cfg.model.architecture
    return f"single-{arch}" if cfg.mode == "single" else f"mint-{m}-{arch}"


@dataclass
class ModelCheckpoint:
    model_config: ModelConfig
    params: dict
    train_config: TrainConfig | None = None
    best_epoch: int | None = None
    best_val_auc: float = float("nan")
    roster: list = field(default_factory=list)
    history: list = field(default_factory=list)
    resume: dict | None = None
    method: str = ""

    @property
    def architecture(self) -> str:
        return self.model_config.architecture

    def build(self) -> torch.nn.Module:
        model = build_model(self.model_config)
        load_params(model, self.params)
        return model


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def shuffle_order(m: int, epoch: int, seed: int, ablate: bool = False) -> list[int]:
    """Network visiting order for ``epoch``; a fresh uniform permutation per (seed, epoch)."""
    if m < 1:
        raise ValueError("need at least one network")
    if ablate:
        return list(range(m))
    return np.random.default_rng([seed, epoch]).permutation(m).tolist()


def params_of(model: torch.nn.Module) -> dict:
    return {k: v.detach().numpy().copy() for k, v in model.state_dict().items()}


def load_params(model: torch.nn.Module, params: dict) -> None:
    expected = set(model.state_dict())
    if set(params) != expected:
        raise CheckpointError(f"parameter names do not match the architecture: {sorted(set(params) ^ expected)}")
    model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in params.items()})


class InputCache:
    """Lazily converts snapshots to model inputs, indexed by (graph, day)."""

    def __init__(self):
        self._items = {}

    def get(self, g: TemporalGraph, t: int) -> SnapshotInputs:
        key = (id(g), t)
        item = self._items.get(key)
        if item is None:
            item = SnapshotInputs.from_snapshot(g.snapshots[t], g.node_count)
            self._items[key] = (g, item)  # holding g keeps id(g) unique
            return item
        return item[1]


def _check_trainable(g: TemporalGraph) -> None:
    if g.labels is None or g.split is None:
        raise ValueError(f"{g.name}: graph must be labelled and split before training")


def train_network(model, opt, g: TemporalGraph, state, cache: InputCache):
    """One chronological pass over ``g``'s train segment with a step per labelled snapshot.

    Gradients are truncated at snapshot boundaries. Returns (mean loss, state).
    """
    losses = []
    labels = g.labels
    model.train()
    for t in range(g.stop("train")):
        inp = cache.get(g, t)
        if labels[t] < 0:
            with torch.no_grad():
                _, state = model(inp, state)
            continue
        opt.zero_grad()
        p, new_state = model(inp, state)
        loss = bce_loss(p, float(labels[t]))
        loss.backward()
        opt.step()
        losses.append(loss.item())
        state = new_state.detach()
    return (float(np.mean(losses)) if losses else float("nan")), state


@torch.no_grad()
def forward_range(model, g: TemporalGraph, state, start: int, stop: int, cache: InputCache | None = None):
    """Forward days ``[start, stop)`` without gradients; returns (probabilities, state)."""
    cache = cache or InputCache()
    model.eval()
    probs = np.empty(stop - start)
    for k, t in enumerate(range(start, stop)):
        p, state = model(cache.get(g, t), state)
        probs[k] = p.item()
    return probs, state


def default_validate(epoch: int, g: TemporalGraph, labels: np.ndarray, probs: np.ndarray) -> float:
    try:
        return roc_auc(labels, probs)
    except ValueError:
        return float("nan")


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------

def train_single(g: TemporalGraph, cfg: TrainConfig, **kwargs):
    """Train on one network. Same loop as :func:`mint_train` with ``m = 1``."""
    if cfg.mode != "single":
        raise ValueError("train_single needs cfg.mode == 'single'")
    return _train([g], cfg, **kwargs)


def mint_train(D: Sequence[TemporalGraph], cfg: TrainConfig, **kwargs):
    """Multi-network training (order shuffling + context switching).

    Each epoch visits the networks in a shuffled order. Before each network
    the historical embeddings are reset, the network's train snapshots are
    processed chronologically with a gradient step per snapshot, and its
    validation snapshots are forwarded to compute validation AUC. The mean
    validation AUC over all networks selects the best model and drives
    early stopping.
    """
    if cfg.mode != "mint":
        raise ValueError("mint_train needs cfg.mode == 'mint'")
    if len(D) == 0:
        raise ValueError("mint_train needs at least one network")
    return _train(list(D), cfg, **kwargs)


def _train(
    D: list[TemporalGraph],
    cfg: TrainConfig,
    *,
    validate: Callable | None = None,
    on_network_start: Callable | None = None,
    resume: ModelCheckpoint | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    stop_after: int | None = None,
    cache: InputCache | None = None,
):
    """Shared loop; returns (best ModelCheckpoint, list of EpochLog).

    ``stop_after`` ends the run after that many epochs of this call (used to
    interrupt and later resume). ``checkpoint_path`` receives the checkpoint,
    with resume state, after every epoch.
    """
    for g in D:
        _check_trainable(g)
    params = {g.label_params for g in D}
    if len(params) > 1:
        raise ValueError(f"networks were labelled with different parameters: {params}")
    validate = validate or default_validate
    cache = cache or InputCache()
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model, cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
    roster = [g.name for g in D]

    best_params = params_of(model)
    best_epoch, best_auc = None, -math.inf
    reference, stale, start = -math.inf, 0, 0
    history: list[dict] = []
    carried = None
    if resume is not None:
        if resume.architecture != cfg.model.architecture:
            raise CheckpointError(
                f"checkpoint architecture {resume.architecture!r} does not match {cfg.model.architecture!r}")
        if resume.resume is None:
            raise CheckpointError("checkpoint carries no resume state")
        r = resume.resume
        load_params(model, r["params"])
        opt.load_state_dict(r["optimizer"])
        best_params, best_epoch = resume.params, resume.best_epoch
        best_auc = resume.best_val_auc if best_epoch is not None else -math.inf
        reference, stale, start = r["reference"], r["stale"], r["epochs_done"]
        history = list(resume.history)
        carried = r.get("state")

    logs: list[EpochLog] = []
    log_file = None
    if log_path is not None:
        new = not Path(log_path).exists() or Path(log_path).stat().st_size == 0
        log_file = open(log_path, "a", newline="")
        writer = csv.writer(log_file)
        if new:
            writer.writerow(EPOCH_LOG_HEADER)

    def checkpoint(epochs_done):
        return ModelCheckpoint(
            model_config=model.cfg, params=best_params, train_config=cfg, best_epoch=best_epoch,
            best_val_auc=best_auc if best_epoch is not None else float("nan"), roster=roster,
            history=list(history), method=method_name(cfg, len(roster)),
            resume={"params": params_of(model), "optimizer": opt.state_dict(), "reference": reference,
                    "stale": stale, "epochs_done": epochs_done, "state": carried},
        )

    try:
        epochs_run = 0
        for epoch in range(start + 1, cfg.max_epochs + 1):
            if stop_after is not None and epochs_run >= stop_after:
                break
            t0 = time.perf_counter()
            order = shuffle_order(len(D), epoch, cfg.seed, ablate=cfg.ablate_shuffle)
            losses, aucs, preds = {}, {}, {}
            for i in order:
                g = D[i]
                if cfg.ablate_context_switch and carried is not None:
                    state = carried.resized(g.node_count)
                else:
                    state = model.init_state(g.node_count)
                if on_network_start is not None:
                    on_network_start(epoch, g.name, state)
                losses[g.name], state = train_network(model, opt, g, state, cache)
                val_days = g.segment("val")
                probs, state = forward_range(model, g, state, g.stop("train"), g.stop("val"), cache)
                preds[g.name] = probs
                aucs[g.name] = float(validate(epoch, g, g.labels[val_days], probs))
                carried = state
            finite = [a for a in aucs.values() if not math.isnan(a)]
            mean_auc = float(np.mean(finite)) if finite else float("nan")
            entry = EpochLog(epoch, {D[i].name: losses[D[i].name] for i in order},
                             {D[i].name: aucs[D[i].name] for i in order}, mean_auc,
                             time.perf_counter() - t0, preds)
            logs.append(entry)
            history.append(entry.record())
            if log_file is not None:
                writer.writerows(entry.rows())
                log_file.flush()
            log.info("epoch %d mean val AUC %.4f (%.1fs)", epoch, mean_auc, entry.seconds)

            if mean_auc > best_auc:
                best_auc, best_epoch, best_params = mean_auc, epoch, params_of(model)
            if mean_auc > reference + cfg.min_delta:
                reference, stale = mean_auc, 0
            else:
                stale += 1
            epochs_run += 1
            if checkpoint_path is not None:
                save_checkpoint(checkpoint(epoch), checkpoint_path)
            if epoch >= cfg.min_epochs and stale >= cfg.patience:
                log.info("early stop at epoch %d", epoch)
                break
        final = checkpoint(start + epochs_run)
    finally:
        if log_file is not None:
            log_file.close()
    return final, logs


def select_best(mean_aucs: Sequence[float]) -> int | None:
    """Index of the highest mean validation AUC; earliest wins ties, NaN never wins."""
    best, best_i = -math.inf, None
    for i, a in enumerate(mean_aucs):
        if a > best:
            best, best_i = a, i
    return best_i


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    zf.writestr(info, data)


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def _state_arrays(state) -> tuple[str, list] | None:
    if state is None:
        return None
    if isinstance(state, HistoricalState):
        return "htgn", [state.current] + list(state.window)
    return "gclstm", [state.h, state.c]


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path) -> Path:
    """Write a versioned zip container: ``meta.json`` plus one ``.npy`` per tensor.

    Entry timestamps are fixed, so identical checkpoints give identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "architecture": ckpt.architecture,
        "method": ckpt.method,
        "model_config": asdict(ckpt.model_config),
        "train_config": None if ckpt.train_config is None else ckpt.train_config.to_dict(),
        "best_epoch": ckpt.best_epoch,
        "best_val_auc": ckpt.best_val_auc,
        "roster": ckpt.roster,
        "history": ckpt.history,
        "params": {k: list(v.shape) for k, v in ckpt.params.items()},
        "resume": None,
    }
    arrays = {f"params/{k}.npy": v for k, v in ckpt.params.items()}
    if ckpt.resume is not None:
        r = ckpt.resume
        opt_state = r["optimizer"]
        opt_meta = {"param_groups": opt_state["param_groups"], "state": {}}
        for idx, st in opt_state["state"].items():
            opt_meta["state"][str(idx)] = sorted(st)
            for key, val in st.items():
                arrays[f"resume/optim/{idx}/{key}.npy"] = val.detach().numpy()
        for k, v in r["params"].items():
            arrays[f"resume/params/{k}.npy"] = v
        state = _state_arrays(r.get("state"))
        if state is not None:
            kind, tensors = state
            for i, t in enumerate(tensors):
                arrays[f"resume/state/{i}.npy"] = t.detach().numpy()
            state = {"kind": kind, "count": len(tensors),
                     "w": r["state"].w if kind == "htgn" else None}
        meta["resume"] = {"optimizer": opt_meta, "reference": r["reference"], "stale": r["stale"],
                          "epochs_done": r["epochs_done"], "params": sorted(r["params"]), "state": state}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _write_entry(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode())
        for name in sorted(arrays):
            _write_entry(zf, name, _npy_bytes(arrays[name]))
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, architecture: str | None = None) -> ModelCheckpoint:
    """Read a checkpoint; ``architecture`` (if given) must match the stored one."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
            read = lambda name: np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
            params = {k: read(f"params/{k}.npy") for k in meta["params"]}
            resume = None
            if meta["resume"] is not None:
                rm = meta["resume"]
                groups = rm["optimizer"]["param_groups"]
                for grp in groups:
                    grp["betas"] = tuple(grp["betas"])
                opt_state = {int(idx): {key: torch.from_numpy(read(f"resume/optim/{idx}/{key}.npy"))
                                        for key in keys}
                             for idx, keys in rm["optimizer"]["state"].items()}
                state = None
                if rm["state"] is not None:
                    ts = [torch.from_numpy(read(f"resume/state/{i}.npy")) for i in range(rm["state"]["count"])]
                    if rm["state"]["kind"] == "htgn":
                        state = HistoricalState(ts[0], ts[1:], rm["state"]["w"])
                    else:
                        state = LSTMState(ts[0], ts[1])
                resume = {"params": {k: read(f"resume/params/{k}.npy") for k in rm["params"]},
                          "optimizer": {"state": opt_state, "param_groups": groups},
                          "reference": rm["reference"], "stale": rm["stale"],
                          "epochs_done": rm["epochs_done"], "state": state}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError, OSError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    if architecture is not None and meta["architecture"] != architecture:
        raise CheckpointError(f"checkpoint holds a {meta['architecture']} model, expected {architecture}")
    tc = meta["train_config"]
    return ModelCheckpoint(
        model_config=ModelConfig(**meta["model_config"]),
        params=params,
        train_config=None if tc is None else TrainConfig.from_dict(tc),
        best_epoch=meta["best_epoch"],
        best_val_auc=meta["best_val_auc"],
        roster=meta["roster"],
        history=meta["history"],
        resume=resume,
        method=meta.get("method", ""),
    )


def write_epoch_logs(logs: Sequence[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_HEADER)
        for entry in logs:
            writer.writerows(entry.rows())


__all__ = [
    "TrainConfig", "EpochLog", "ModelCheckpoint", "CheckpointError", "shuffle_order", "reset_context",
    "train_single", "mint_train", "select_best", "save_checkpoint", "load_checkpoint",
    "forward_range", "InputCache", "write_epoch_logs",
]
