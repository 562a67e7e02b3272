"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad

__all__ = ["finite_diff_check", "relative_error", "numeric_grad"]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. every entry of ``x``.

    ``x.data`` is perturbed in place and restored after each probe.
    """
    out = np.zeros(x.shape)
    flat = x.data.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f().item()
            flat[k] = orig - h
            fm = f().item()
            flat[k] = orig
            gflat[k] = (fp - fm) / (2.0 * h)
    return out


def finite_diff_check(f: Callable[[], Tensor], x: Tensor | list[Tensor], h: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is a zero-argument closure returning a scalar tensor that depends on
    ``x`` (one tensor or a list). Each ``x`` must have ``requires_grad=True``.
    """
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    xs = x if isinstance(x, (list, tuple)) else [x]
    grads = backward(f())
    worst = 0.0
    for t in xs:
        analytic = grads.get(t)
        if analytic is None:
            analytic = np.zeros(t.shape)
        numeric = numeric_grad(f, t, h)
        if t.data.size:
            worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst
