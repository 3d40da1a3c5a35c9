"""Poincaré-ball operations anchored at the origin.

All functions take torch tensors (array-likes are converted to float64)
whose last dimension is the embedding dimension, and are differentiable
through autograd. The ball of curvature ``-c`` is ``{x : c * |x|^2 < 1}``.
"""
from __future__ import annotations

from typing import Callable

import torch

MIN_NORM = 1e-12
BALL_EPS = 1e-5
ARTANH_MAX = 1.0 - 1e-15
MIN_DENOM = 1e-15


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def _check_c(c: float) -> float:
    c = float(c)
    if not c > 0:
        raise ValueError(f"curvature must be positive, got {c}")
    return c


def _norm(x: torch.Tensor) -> torch.Tensor:
    # clamping the squared norm keeps both value and gradient finite at 0
    return torch.sqrt(torch.clamp((x * x).sum(-1, keepdim=True), min=MIN_NORM ** 2))


def project_to_ball(x, c: float = 1.0, eps: float = BALL_EPS) -> torch.Tensor:
    """Pull points with ``c|x|^2 >= 1 - eps`` back to radius ``(1 - eps)/sqrt(c)``."""
    x = _tensor(x)
    c = _check_c(c)
    norm = _norm(x)
    outside = c * norm * norm >= 1.0 - eps
    if not bool(outside.any()):
        return x
    max_norm = (1.0 - eps) / c ** 0.5
    return torch.where(outside, x / norm * max_norm, x)


def exp_map(v, c: float = 1.0) -> torch.Tensor:
    """Exponential map at the origin: tangent vector -> ball point."""
    v = _tensor(v)
    c = _check_c(c)
    if not bool(torch.isfinite(v).all()):
        raise ValueError("exp_map input is not finite")
    sqrt_c = c ** 0.5
    norm = _norm(v)
    out = torch.tanh(sqrt_c * norm) * v / (sqrt_c * norm)
    return project_to_ball(out, c)


def log_map(y, c: float = 1.0) -> torch.Tensor:
    """Logarithmic map at the origin: ball point -> tangent vector."""
    y = _tensor(y)
    c = _check_c(c)
    sq = (y * y).sum(-1)
    if bool((c * sq >= 1.0).any()) or not bool(torch.isfinite(sq).all()):
        raise ValueError("log_map input lies on or outside the ball boundary")
    sqrt_c = c ** 0.5
    norm = _norm(y)
    scaled = torch.clamp(sqrt_c * norm, max=ARTANH_MAX)
    return torch.atanh(scaled) * y / (sqrt_c * norm)


def mobius_add(x, y, c: float = 1.0) -> torch.Tensor:
    x, y = _tensor(x), _tensor(y)
    c = _check_c(c)
    xy = (x * y).sum(-1, keepdim=True)
    x2 = (x * x).sum(-1, keepdim=True)
    y2 = (y * y).sum(-1, keepdim=True)
    num = (1 + 2 * c * xy + c * y2) * x + (1 - c * x2) * y
    denom = 1 + 2 * c * xy + c * c * x2 * y2
    if bool((denom < MIN_DENOM).any()):
        raise ValueError("near-antipodal points in mobius_add")
    return project_to_ball(num / denom, c)


def mobius_matvec(W, x, c: float = 1.0) -> torch.Tensor:
    """``exp0(W @ log0(x))`` applied row-wise; ``W`` is (d_out, d_in)."""
    W, x = _tensor(W), _tensor(x)
    if W.dim() != 2 or W.shape[1] != x.shape[-1]:
        raise ValueError(f"cannot apply {tuple(W.shape)} matrix to points of dim {x.shape[-1]}")
    return exp_map(log_map(x, c) @ W.transpose(0, 1), c)


def hyp_activation(x, sigma: Callable[[torch.Tensor], torch.Tensor], c: float = 1.0) -> torch.Tensor:
    return exp_map(sigma(log_map(x, c)), c)


def in_ball(x, c: float = 1.0) -> bool:
    x = _tensor(x)
    return bool((c * (x * x).sum(-1) < 1.0).all())
