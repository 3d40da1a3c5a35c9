"""Temporal graph encoders (HTGN, GC-LSTM) and the graph-pooling decoder.

Both encoders consume one :class:`SnapshotInputs` at a time together with a
recurrent state and return the new state plus per-node embeddings. Nothing
here depends on the node count, so one parameter set runs on any network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dtdg import Snapshot
from .hyperbolic import exp_map, hyp_activation, log_map, mobius_add, mobius_matvec

DTYPE = torch.float64
N_NODE_FEATURES = 4
N_GRAPH_FEATURES = 4
PROB_CLAMP = 1e-7


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------

def node_features(s: Snapshot, node_count: int) -> np.ndarray:
    """Per-node ``log1p([in_deg, out_deg, in_weight, out_weight])`` for one day."""
    if s.edge_count and max(s.src.max(), s.dst.max()) >= node_count:
        raise ValueError("snapshot references nodes beyond node_count")
    raw = np.stack([
        np.bincount(s.dst, minlength=node_count),
        np.bincount(s.src, minlength=node_count),
        np.bincount(s.dst, weights=s.weight, minlength=node_count),
        np.bincount(s.src, weights=s.weight, minlength=node_count),
    ], axis=1).astype(np.float64)
    return np.log1p(raw)


def graph_features(s: Snapshot) -> np.ndarray:
    """Mean in-degree, in-weight, out-degree, out-weight over the active nodes."""
    if s.n_active == 0:
        raise ValueError("snapshot has no active nodes")
    e = s.edge_count / s.n_active
    w = float(s.weight.sum()) / s.n_active
    return np.array([e, w, e, w], dtype=np.float64)


def neighbour_pairs(s: Snapshot, node_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (node, neighbour) pairs ignoring direction; isolated nodes pair with themselves."""
    i = np.concatenate([s.dst, s.src])
    j = np.concatenate([s.src, s.dst])
    keys = np.unique(i * node_count + j)
    i, j = keys // node_count, keys % node_count
    has = np.zeros(node_count, dtype=bool)
    has[i] = True
    iso = np.flatnonzero(~has)
    order = np.argsort(np.concatenate([i, iso]), kind="stable")
    return np.concatenate([i, iso])[order], np.concatenate([j, iso])[order]


def normalized_adjacency(s: Snapshot, node_count: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse ``D^-1/2 (A + I) D^-1/2`` with A the symmetrised summed edge weights.

    Returns (rows, cols, values) in COO form.
    """
    r = np.concatenate([s.src, s.dst, np.arange(node_count)])
    c = np.concatenate([s.dst, s.src, np.arange(node_count)])
    v = np.concatenate([s.weight, s.weight, np.ones(node_count)])
    keys, inverse = np.unique(r * node_count + c, return_inverse=True)
    vals = np.bincount(inverse, weights=v)
    rows, cols = keys // node_count, keys % node_count
    deg = np.bincount(rows, weights=vals, minlength=node_count)
    dinv = 1.0 / np.sqrt(deg)
    return rows, cols, vals * dinv[rows] * dinv[cols]


@dataclass
class SnapshotInputs:
    """Tensors derived from one snapshot, reused across epochs."""

    features: torch.Tensor          # (N, 4)
    graph_features: torch.Tensor    # (4,)
    nbr_i: torch.Tensor
    nbr_j: torch.Tensor
    adj_rows: torch.Tensor
    adj_cols: torch.Tensor
    adj_vals: torch.Tensor
    n_active: int

    @classmethod
    def from_snapshot(cls, s: Snapshot, node_count: int) -> "SnapshotInputs":
        ni, nj = neighbour_pairs(s, node_count)
        ar, ac, av = normalized_adjacency(s, node_count)
        as_long = lambda a: torch.as_tensor(a, dtype=torch.long)
        return cls(
            features=torch.as_tensor(node_features(s, node_count), dtype=DTYPE),
            graph_features=torch.as_tensor(graph_features(s), dtype=DTYPE),
            nbr_i=as_long(ni), nbr_j=as_long(nj),
            adj_rows=as_long(ar), adj_cols=as_long(ac),
            adj_vals=torch.as_tensor(av, dtype=DTYPE),
            n_active=s.n_active,
        )

    @property
    def node_count(self) -> int:
        return self.features.shape[0]


# ---------------------------------------------------------------------------
# functional building blocks
# ---------------------------------------------------------------------------

def segment_softmax(scores: torch.Tensor, index: torch.Tensor, n: int) -> torch.Tensor:
    """Softmax of ``scores`` within groups sharing the same ``index``."""
    smax = torch.full((n,), -math.inf, dtype=scores.dtype).scatter_reduce(
        0, index, scores.detach(), reduce="amax", include_self=True)
    e = torch.exp(scores - smax[index])
    denom = torch.zeros(n, dtype=scores.dtype).index_add(0, index, e)
    return e / denom[index]


def hgnn_forward(x, nbr_i, nbr_j, W, b, a, c: float = 1.0, slope: float = 0.2, return_attention=False):
    """Hyperbolic attention graph layer.

    ``x`` holds tangent vectors (N, d_in). Messages ``W (x) x_i (+) b`` are
    attended over each node's neighbours in the origin's tangent space,
    re-projected, then passed through a hyperbolic LeakyReLU.
    """
    if W.shape[1] != x.shape[-1] or b.shape[-1] != W.shape[0] or a.shape[-1] != 2 * W.shape[0]:
        raise ValueError("hgnn_forward: inconsistent parameter dimensions")
    n, d = x.shape[0], W.shape[0]
    xh = exp_map(x, c)
    m = mobius_add(mobius_matvec(W, xh, c), exp_map(b, c).expand(n, d), c)
    u = log_map(m, c)
    scores = F.leaky_relu(u[nbr_i] @ a[:d] + u[nbr_j] @ a[d:], slope)
    alpha = segment_softmax(scores, nbr_i, n)
    agg = torch.zeros(n, d, dtype=u.dtype).index_add(0, nbr_i, alpha[:, None] * u[nbr_j])
    out = hyp_activation(exp_map(agg, c), lambda t: F.leaky_relu(t, slope), c)
    return (out, alpha) if return_attention else out


def hta_forward(window, W_a, q, c: float = 1.0) -> torch.Tensor:
    """Temporal attention over past ball states (each (N, d)); returns (N, d)."""
    if len(window) == 0:
        raise ValueError("hta_forward: empty window")
    u = log_map(torch.stack(list(window)), c)               # (k, N, d)
    scores = torch.tanh(u @ W_a.transpose(0, 1)) @ q        # (k, N)
    beta = torch.softmax(scores, dim=0)
    return exp_map((beta[..., None] * u).sum(0), c)


def hgru_forward(x_ball, h_ball, Wz, Wr, Wh, Uz, Ur, Uh, c: float = 1.0) -> torch.Tensor:
    if x_ball.shape[-1] != Wz.shape[1] or h_ball.shape[-1] != Uz.shape[1] or x_ball.shape[0] != h_ball.shape[0]:
        raise ValueError("hgru_forward: dimension mismatch")
    x = log_map(x_ball, c)
    h = log_map(h_ball, c)
    T = lambda M: M.transpose(0, 1)
    p = torch.sigmoid(x @ T(Wz) + h @ T(Uz))
    r = torch.sigmoid(x @ T(Wr) + h @ T(Ur))
    h_tilde = torch.tanh(x @ T(Wh) + (r * h) @ T(Uh))
    return exp_map((1 - p) * h_tilde + p * h, c)


def bce_loss(p, y) -> torch.Tensor:
    p = torch.clamp(torch.as_tensor(p, dtype=DTYPE), PROB_CLAMP, 1 - PROB_CLAMP)
    y = torch.as_tensor(y, dtype=DTYPE)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p))


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass
class HistoricalState:
    """Per-node ball embeddings plus the last ``w`` states for temporal attention."""

    current: torch.Tensor
    window: list = field(default_factory=list)
    w: int = 5

    @property
    def node_count(self) -> int:
        return self.current.shape[0]

    def detach(self) -> "HistoricalState":
        return HistoricalState(self.current.detach(), [h.detach() for h in self.window], self.w)

    def padded_window(self) -> list:
        # a fresh or young state is padded with its current embedding
        return self.window + [self.current] * (self.w - len(self.window))

    def advance(self, h: torch.Tensor) -> "HistoricalState":
        return HistoricalState(h, (self.window + [h])[-self.w:], self.w)

    def resized(self, node_count: int) -> "HistoricalState":
        return HistoricalState(_resize(self.current, node_count), [_resize(h, node_count) for h in self.window], self.w)


@dataclass
class LSTMState:
    h: torch.Tensor
    c: torch.Tensor

    @property
    def node_count(self) -> int:
        return self.h.shape[0]

    def detach(self) -> "LSTMState":
        return LSTMState(self.h.detach(), self.c.detach())

    def resized(self, node_count: int) -> "LSTMState":
        return LSTMState(_resize(self.h, node_count), _resize(self.c, node_count))


def _resize(t: torch.Tensor, n: int) -> torch.Tensor:
    """Keep the first ``min(n, len(t))`` rows; new rows start at the origin."""
    out = torch.zeros(n, t.shape[1], dtype=t.dtype)
    k = min(n, t.shape[0])
    out[:k] = t[:k]
    return out


def reset_context(node_count: int, dim: int, w: int = 5) -> HistoricalState:
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    return HistoricalState(torch.zeros(node_count, dim, dtype=DTYPE), [], w)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "htgn"   # htgn | gclstm
    hidden_dim: int = 32
    window: int = 5
    curvature: float = 1.0
    leaky_slope: float = 0.2
    decoder_hidden: int = 32
    attention_dim: int = 16

    def __post_init__(self):
        if self.architecture not in ("htgn", "gclstm"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.curvature <= 0 or self.hidden_dim < 1 or self.window < 1:
            raise ValueError(f"invalid model config {self}")


def _param(gen: torch.Generator, *shape, scale: float | None = None) -> nn.Parameter:
    if scale is None:
        # glorot uniform
        fan = shape[0] + shape[-1] if len(shape) > 1 else shape[0]
        scale = math.sqrt(6.0 / fan)
    t = (torch.rand(*shape, generator=gen, dtype=DTYPE) * 2 - 1) * scale
    return nn.Parameter(t)


class Decoder(nn.Module):
    """Mean-pool node embeddings, append graph features, MLP -> probability."""

    def __init__(self, dim: int, hidden: int, gen: torch.Generator):
        super().__init__()
        self.W1 = _param(gen, hidden, dim + N_GRAPH_FEATURES)
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.W2 = _param(gen, 1, hidden)
        self.b2 = nn.Parameter(torch.zeros(1, dtype=DTYPE))

    def forward(self, emb: torch.Tensor, g_feat: torch.Tensor, n_active: int, c: float | None = None):
        if n_active < 1:
            raise ValueError("decode needs at least one active node")
        tangent = log_map(emb[:n_active], c) if c is not None else emb[:n_active]
        z = torch.cat([tangent.mean(0), g_feat])
        hidden = torch.tanh(self.W1 @ z + self.b1)
        return torch.sigmoid(self.W2 @ hidden + self.b2)[0]


def decode(emb, g_feat, decoder: Decoder, n_active: int | None = None, c: float | None = None):
    """Functional wrapper around :class:`Decoder` (all nodes active by default)."""
    return decoder(emb, g_feat, emb.shape[0] if n_active is None else n_active, c)


class HTGN(nn.Module):
    """Input projection -> HGNN -> HTA -> HGRU over the Poincaré ball."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.cfg = replace(cfg, architecture="htgn")
        d, da = cfg.hidden_dim, cfg.attention_dim
        gen = torch.Generator().manual_seed(seed)
        self.W_in = _param(gen, d, N_NODE_FEATURES)
        self.b_in = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.W = _param(gen, d, d)
        self.b = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.a = _param(gen, 2 * d, scale=0.1)
        self.W_a = _param(gen, da, d)
        self.q = _param(gen, da, scale=0.1)
        for name in ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh"):
            setattr(self, name, _param(gen, d, d))
        self.decoder = Decoder(d, cfg.decoder_hidden, gen)

    @property
    def c(self) -> float:
        return self.cfg.curvature

    def init_state(self, node_count: int) -> HistoricalState:
        return reset_context(node_count, self.cfg.hidden_dim, self.cfg.window)

    def encode(self, inp: SnapshotInputs, state: HistoricalState) -> tuple[HistoricalState, torch.Tensor]:
        if state.node_count != inp.node_count:
            raise ValueError(f"state has {state.node_count} nodes, snapshot has {inp.node_count}")
        c = self.c
        x = inp.features @ self.W_in.T + self.b_in
        x_ball = hgnn_forward(x, inp.nbr_i, inp.nbr_j, self.W, self.b, self.a, c, self.cfg.leaky_slope)
        h_prev = hta_forward(state.padded_window(), self.W_a, self.q, c)
        h = hgru_forward(x_ball, h_prev, self.Wz, self.Wr, self.Wh, self.Uz, self.Ur, self.Uh, c)
        return state.advance(h), h

    def forward(self, inp: SnapshotInputs, state: HistoricalState):
        """Returns (probability, new state)."""
        state, h = self.encode(inp, state)
        return self.decoder(h, inp.graph_features, inp.n_active, self.c), state


class GCLSTM(nn.Module):
    """Graph convolution on the node features feeding a per-node LSTM cell."""

    def __init__(self, cfg: ModelConfig = ModelConfig(architecture="gclstm"), seed: int = 0):
        super().__init__()
        self.cfg = replace(cfg, architecture="gclstm")
        d = cfg.hidden_dim
        gen = torch.Generator().manual_seed(seed)
        self.W_conv = _param(gen, N_NODE_FEATURES, d)
        # gates stacked as [input, forget, output, cell]
        self.W_gates = _param(gen, 4 * d, d)
        self.U_gates = _param(gen, 4 * d, d)
        self.b_gates = nn.Parameter(torch.zeros(4 * d, dtype=DTYPE))
        self.decoder = Decoder(d, cfg.decoder_hidden, gen)

    c = None

    def init_state(self, node_count: int) -> LSTMState:
        if node_count < 1:
            raise ValueError("node_count must be >= 1")
        z = torch.zeros(node_count, self.cfg.hidden_dim, dtype=DTYPE)
        return LSTMState(z, z.clone())

    def encode(self, inp: SnapshotInputs, state: LSTMState) -> tuple[LSTMState, torch.Tensor]:
        if state.node_count != inp.node_count:
            raise ValueError(f"state has {state.node_count} nodes, snapshot has {inp.node_count}")
        h, c = gclstm_cell(inp, state.h, state.c, self.W_conv, self.W_gates, self.U_gates, self.b_gates)
        return LSTMState(h, c), h

    def forward(self, inp: SnapshotInputs, state: LSTMState):
        state, h = self.encode(inp, state)
        return self.decoder(h, inp.graph_features, inp.n_active), state


def graph_conv(inp: SnapshotInputs, X: torch.Tensor, W: torch.Tensor) -> torch.Tensor:
    xw = X @ W
    return torch.zeros(X.shape[0], W.shape[1], dtype=xw.dtype).index_add(
        0, inp.adj_rows, inp.adj_vals[:, None] * xw[inp.adj_cols])


def gclstm_cell(inp, h, c, W_conv, W_gates, U_gates, b_gates):
    if W_conv.shape[0] != inp.features.shape[1] or h.shape != c.shape or h.shape[1] * 4 != W_gates.shape[0]:
        raise ValueError("gclstm: dimension mismatch")
    z = graph_conv(inp, inp.features, W_conv)
    i, f, o, g = (z @ W_gates.T + h @ U_gates.T + b_gates).chunk(4, dim=1)
    c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_new = torch.sigmoid(o) * torch.tanh(c_new)
    return h_new, c_new


def build_model(cfg: ModelConfig, seed: int = 0) -> nn.Module:
    return HTGN(cfg, seed) if cfg.architecture == "htgn" else GCLSTM(cfg, seed)
