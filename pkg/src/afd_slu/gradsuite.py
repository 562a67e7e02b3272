"""Finite-difference gradient suite over every differentiable piece.

Each case is a zero-argument scalar closure plus the tensors it is checked
against. Cases cover the primitive ops, the adapter in all its forms, the
task loss through the full student, and the distillation objective through
student and adapter together. Shapes are small so one seed runs in seconds.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .adapter import AdapterConfig, init_adapter, project
from .data import Utterance, build_label_maps, encode_batch
from .gradcheck import finite_diff_check
from .student import StudentConfig, forward, init_student, task_loss
from .teacher import SyntheticFrozenTeacher
from .tensor import Tensor, concat, embedding, exp, log, masked_fill, sigmoid, sqrt, stack, tanh, transpose
from .trainer import total_loss

__all__ = ["GradCase", "CaseResult", "PointSpec", "op_cases", "model_cases", "run_suite", "TOLERANCE", "STEP"]

TOLERANCE = 1e-5
STEP = 1e-6


@dataclass
class GradCase:
    name: str
    f: Callable[[], Tensor]
    wrt: list[Tensor]


@dataclass
class CaseResult:
    seed: int
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error <= TOLERANCE


def _param(rng, *shape, low=None, high=None):
    if low is None:
        return Tensor(rng.normal(size=shape), requires_grad=True)
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def _readout(rng, *shape) -> np.ndarray:
    # weights bounded away from zero keep each gradient entry well above the
    # roundoff floor of a central difference
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.5, 1.5, size=shape)


def op_cases(rng: np.random.Generator) -> list[GradCase]:
    r, c, k = (int(v) for v in rng.integers(2, 9, size=3))
    w = _readout(rng, r, c)
    x, y = _param(rng, r, c), _param(rng, r, c)
    m = _param(rng, c, k)
    pos = _param(rng, r, c, low=0.5, high=2.0)
    d = max(c, 3)  # width-2 rows normalize to +-1 whatever the input, leaving zero gradients
    xl, gain, bias, wl = _param(rng, r, d), _param(rng, d), _param(rng, d), _readout(rng, r, d)
    mask = (rng.random((r, c)) > 0.3).astype(np.float64)
    mask[:, 0] = 1.0
    targets = rng.integers(0, c, size=r)
    targets[0] = -100
    ids = rng.integers(0, c, size=(2, 3))
    wk = _readout(rng, r, k)
    we = _readout(rng, 2, 3, k)
    return [
        GradCase("matmul", lambda: ((x @ m) * wk).sum(), [x, m]),
        GradCase("add_sub_mul_div", lambda: ((x + y) * (x - y) / pos * w).sum(), [x, y, pos]),
        GradCase("exp_log_sqrt", lambda: ((exp(pos) + log(pos)) * sqrt(pos) * w).sum(), [pos]),
        GradCase("tanh_sigmoid", lambda: (tanh(x) * sigmoid(y) * w).sum(), [x, y]),
        GradCase("gelu", lambda: (ops.gelu(x) * w).sum(), [x]),
        GradCase("layer_norm", lambda: (ops.layer_norm(xl, gain, bias) * wl).sum(), [xl, gain, bias]),
        GradCase("softmax_masked", lambda: (ops.softmax_masked(x, mask) * w).sum(), [x]),
        GradCase("mse_sum", lambda: ops.mse_sum(x, y), [x, y]),
        GradCase("cross_entropy", lambda: ops.cross_entropy(x, targets, -100), [x]),
        GradCase("concat_stack_mean", lambda: (concat([x, y], 0).sum(0) * stack([x, y]).mean(0) * w).sum(), [x, y]),
        GradCase("transpose_index", lambda: (transpose(x)[::-1] * w.T).sum(), [x]),
        GradCase("masked_fill", lambda: (masked_fill(x, mask) * w).sum(), [x]),
        GradCase("embedding", lambda: (embedding(m, ids) * we).sum(), [m]),
    ]


# five and six tokens: recurrent weight gradients sum over more steps, so
# fewer of them land near zero
_TINY_CORPUS = [
    Utterance("g0", ("play", "some", "cool", "jazz", "now"), ("O", "O", "B-genre", "I-genre", "O"), "music"),
    Utterance("g1", ("will", "it", "rain", "in", "oslo", "city"), ("O", "O", "O", "O", "B-city", "I-city"), "weather"),
]


@dataclass(frozen=True)
class PointSpec:
    """Where the model cases are evaluated.

    Student parameters are redrawn N(0, student_scale^2) so every gate and the
    attention scores sit in their responsive range; adapter weights keep the
    fan-in rule times ``adapter_gain`` with N(0, bias_scale^2) biases.
    """

    d_es: int = 3
    d_et: int = 4
    d_emb: int = 3
    d_lstm: int = 2
    student_scale: float = 1.0
    adapter_gain: float = 1.0
    bias_scale: float = 0.5
    target_offset: float = 0.1


def _redraw_student(params: dict[str, Tensor], rng, scale: float) -> None:
    for t in params.values():
        t.data[...] = rng.normal(0.0, scale, size=t.shape)


def _redraw_adapter(params: dict[str, Tensor], rng, gain: float, bias_scale: float) -> None:
    for name, t in params.items():
        if name.endswith("gain"):
            t.data[...] = rng.uniform(0.5, 1.5, size=t.shape)
        elif name.startswith("w"):
            t.data[...] *= gain
        else:
            t.data[...] = rng.normal(0.0, bias_scale, size=t.shape)


def model_cases(rng: np.random.Generator, point: PointSpec | None = None) -> list[GradCase]:
    """Adapter and full-model cases on a 2-utterance batch of unequal length."""
    pt = point or PointSpec()
    cases = []
    e_s = _param(rng, 2, pt.d_es)
    noise = rng.normal(size=(2, pt.d_et))

    def adapter(kind="rpnn", width="dh"):
        ap = init_adapter(AdapterConfig(residual_width=width, w4_scale=1.0), pt.d_es, pt.d_et, rng, kind=kind)
        _redraw_adapter(ap, rng, pt.adapter_gain, pt.bias_scale)
        return ap

    def near(ap):
        # a target close to the output keeps the loss small, which lowers the
        # absolute roundoff of each probe
        return project(e_s, ap).data + pt.target_offset * noise

    for width in ("dh", "des"):
        ap = adapter(width=width)
        t = near(ap)
        cases.append(
            GradCase(f"project[{width}]", lambda ap=ap, t=t: ops.mse_sum(project(e_s, ap), t), [e_s, *ap.values()])
        )
    lp = adapter(kind="linear")
    tl = near(lp)
    cases.append(GradCase("project[linear]", lambda: ops.mse_sum(project(e_s, lp), tl), [e_s, *lp.values()]))

    maps = build_label_maps(_TINY_CORPUS)
    batch = encode_batch(_TINY_CORPUS, maps)
    scfg = StudentConfig(d_emb=pt.d_emb, d_lstm=pt.d_lstm, d_attn=pt.d_es, dropout=0.0)
    sp = init_student(scfg, maps.n_tokens, maps.n_intents, maps.n_slots, rng)
    _redraw_student(sp, rng, pt.student_scale)
    cases.append(GradCase("task_loss", lambda: task_loss(forward(batch, sp), batch), list(sp.values())))

    ap = adapter()
    teacher = SyntheticFrozenTeacher(int(rng.integers(1 << 31)), maps.n_tokens, pt.d_et)
    e_t = teacher.embed(batch)
    lam = float(rng.uniform(0.1, 0.7))

    def l_total():
        out = forward(batch, sp)
        return total_loss(task_loss(out, batch), ops.mse_sum(e_t, project(out.sentence, ap)), lam)

    cases.append(GradCase("L_total", l_total, [*sp.values(), *ap.values()]))
    return cases


def run_suite(seeds, h: float = STEP, include=None, point: PointSpec | None = None) -> list[CaseResult]:
    results = []
    for seed in seeds:
        rng = np.random.default_rng([int(seed), 0x6AD])
        for case in op_cases(rng) + model_cases(rng, point):
            if include is not None and case.name not in include:
                continue
            t0 = time.perf_counter()
            err = finite_diff_check(case.f, case.wrt, h=h)
            results.append(CaseResult(int(seed), case.name, err, time.perf_counter() - t0))
    return results
