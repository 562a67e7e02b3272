"""Fused differentiable ops used by the student, adapter and losses."""

from __future__ import annotations

import math

import numpy as np

from .tensor import DimensionError, RankError, Tensor, _make, as_tensor

__all__ = [
    "DegenerateMaskError",
    "EmptyReductionError",
    "GELU_COEF",
    "SQRT_2_OVER_PI",
    "MASK_FILL",
    "gelu",
    "layer_norm",
    "softmax_masked",
    "mse_sum",
    "cross_entropy",
    "linear",
]

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_COEF = 0.044715
MASK_FILL = -1e30


class DegenerateMaskError(ValueError):
    """A mask row selects no position at all."""


class EmptyReductionError(ValueError):
    """A mean was requested over zero elements."""


def gelu(x) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    xd = x.data
    t = np.tanh(SQRT_2_OVER_PI * (xd + GELU_COEF * xd**3))
    out = 0.5 * xd * (1.0 + t)

    def rule(g):
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _make(out, (x,), rule)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with biased variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm over an empty last dimension")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim {d} of {x.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data
    lead = tuple(range(xd.ndim - 1))

    def rule(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gain, bias), rule)


def softmax_masked(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is 1.

    Masked positions come out exactly 0 and receive no gradient.
    """
    logits = as_tensor(logits)
    keep = np.broadcast_to(np.asarray(mask) != 0, logits.shape)
    if logits.shape[-1] == 0 or not keep.any(axis=-1).all():
        raise DegenerateMaskError("softmax_masked: a mask row has no valid position")
    z = np.where(keep, logits.data, MASK_FILL)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(z), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (logits,), rule)


def mse_sum(a, b) -> Tensor:
    """Squared error summed over features and averaged over the batch rows."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse_sum: shapes {a.shape} and {b.shape} differ")
    if a.ndim != 2:
        raise RankError(f"mse_sum expects [batch, dim] operands, got {a.shape}")
    n = a.shape[0]
    if n == 0:
        raise EmptyReductionError("mse_sum over an empty batch")
    diff = a.data - b.data
    out = np.asarray((diff * diff).sum() / n)

    def rule(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return _make(out, (a, b), rule)


def cross_entropy(logits, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    Rows whose target equals ``ignore_index`` are dropped before any
    arithmetic, so their logits cannot influence the result.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise RankError(f"cross_entropy expects [n, C] logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, C = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    valid = np.ones(n, dtype=bool) if ignore_index is None else targets != ignore_index
    rows = np.flatnonzero(valid)
    if rows.size == 0:
        raise EmptyReductionError("cross_entropy: every row is ignored")
    t = targets[rows]
    if t.min() < 0 or t.max() >= C:
        raise IndexError(f"cross_entropy: target outside [0, {C})")
    z = logits.data[rows]
    m = z.max(axis=1, keepdims=True)
    sh = z - m
    lse = np.log(np.exp(sh).sum(axis=1, keepdims=True))
    logp = sh - lse
    k = rows.size
    out = np.asarray(-logp[np.arange(k), t].sum() / k)

    def rule(g):
        p = np.exp(logp)
        p[np.arange(k), t] -= 1.0
        full = np.zeros((n, C))
        full[rows] = p * (g / k)
        return (full,)

    return _make(out, (logits,), rule)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as [in, out]."""
    y = as_tensor(x) @ weight
    return y if bias is None else y + bias
