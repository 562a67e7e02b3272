"""Residual projection adapter mapping student sentence vectors into teacher space.

    h1  = LN1(GELU(e_s W1 + b1))                      width d_h = 4 d_es
    h2  = LN2(skip(h1) + GELU(h1 W2 + b2) W3 + b3)
    e_S = h2 W4 + b4                                  width d_et

The residual branch output and the skip must agree in width. With
``residual_width="dh"`` (default) the branch stays d_h wide and the skip is
h1 itself; with ``"des"`` the branch lands in d_es and the skip keeps the
first d_es coordinates of h1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import gelu, layer_norm, linear
from .student import uniform_fan_in
from .tensor import DimensionError, Tensor

__all__ = ["AdapterConfig", "init_adapter", "project", "RESIDUAL_WIDTHS", "ADAPTER_KINDS"]

RESIDUAL_WIDTHS = ("dh", "des")
ADAPTER_KINDS = ("rpnn", "linear")
LN_EPS = 1e-5


@dataclass(frozen=True)
class AdapterConfig:
    residual_width: str = "dh"
    w4_scale: float = 0.1
    ln_eps: float = LN_EPS

    def __post_init__(self):
        if self.residual_width not in RESIDUAL_WIDTHS:
            raise ValueError(f"residual_width must be one of {RESIDUAL_WIDTHS}, got {self.residual_width!r}")


def init_adapter(cfg: AdapterConfig, d_es: int, d_et: int, rng, kind: str = "rpnn") -> dict[str, Tensor]:
    """Adapter weights. ``kind="linear"`` is the single-matrix map used to ablate the network."""
    if kind == "linear":
        p = {"w": uniform_fan_in(rng, (d_es, d_et)), "b": np.zeros(d_et)}
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
    if kind != "rpnn":
        raise ValueError(f"unknown adapter kind {kind!r}")
    d_h = 4 * d_es
    d_out = d_h if cfg.residual_width == "dh" else d_es
    p = {
        "w1": uniform_fan_in(rng, (d_es, d_h)),
        "b1": np.zeros(d_h),
        "ln1.gain": np.ones(d_h),
        "ln1.bias": np.zeros(d_h),
        "w2": uniform_fan_in(rng, (d_h, d_h)),
        "b2": np.zeros(d_h),
        "w3": uniform_fan_in(rng, (d_h, d_out)),
        "b3": np.zeros(d_out),
        "ln2.gain": np.ones(d_out),
        "ln2.bias": np.zeros(d_out),
        "w4": cfg.w4_scale * uniform_fan_in(rng, (d_out, d_et)),
        "b4": np.zeros(d_et),
    }
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def project(e_s: Tensor, params: dict[str, Tensor], eps: float = LN_EPS) -> Tensor:
    """Map [B, d_es] student vectors to [B, d_et]; the adapter kind is read off ``params``."""
    if "w" in params:
        w = params["w"]
        if e_s.shape[-1] != w.shape[0]:
            raise DimensionError(f"adapter expects width {w.shape[0]}, got input {e_s.shape}")
        return linear(e_s, w, params["b"])
    w1 = params["w1"]
    d_es, d_h = w1.shape
    if e_s.shape[-1] != d_es:
        raise DimensionError(f"adapter expects width {d_es}, got input {e_s.shape}")
    h1 = layer_norm(gelu(linear(e_s, w1, params["b1"])), params["ln1.gain"], params["ln1.bias"], eps)
    branch = linear(gelu(linear(h1, params["w2"], params["b2"])), params["w3"], params["b3"])
    skip = h1 if branch.shape[-1] == d_h else h1[..., : branch.shape[-1]]
    h2 = layer_norm(skip + branch, params["ln2.gain"], params["ln2.bias"], eps)
    return linear(h2, params["w4"], params["b4"])
