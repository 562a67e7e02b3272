"""Joint intent/slot student: embeddings, BiLSTM, self-attention, pooling, heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import IGNORE_INDEX, EncodedBatch
from .ops import cross_entropy, linear, softmax_masked
from .tensor import Tensor, concat, embedding, masked_fill, reshape, sigmoid, stack, tanh, transpose

__all__ = [
    "StudentConfig",
    "StudentOutput",
    "init_student",
    "uniform_fan_in",
    "forward",
    "task_loss",
    "predict",
]


@dataclass(frozen=True)
class StudentConfig:
    d_emb: int = 64
    d_lstm: int = 64  # per direction
    d_attn: int = 64  # also the sentence-embedding width d_es
    dropout: float = 0.4

    @property
    def d_es(self) -> int:
        return self.d_attn


@dataclass
class StudentOutput:
    intent_logits: Tensor  # [B, n_intents]
    slot_logits: Tensor  # [B, L, n_slots], exactly 0 on padding
    sentence: Tensor  # [B, d_es]
    token_states: Tensor  # [B, L, d_es], exactly 0 on padding


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int | None = None) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in if fan_in is not None else shape[0])
    return rng.uniform(-bound, bound, size=shape)


def init_student(cfg: StudentConfig, n_tokens: int, n_intents: int, n_slots: int, rng) -> dict[str, Tensor]:
    """Fresh parameters; draw order is fixed so a seed pins every value."""
    H, A = cfg.d_lstm, cfg.d_attn
    p: dict[str, np.ndarray] = {}
    p["embedding"] = uniform_fan_in(rng, (n_tokens, cfg.d_emb), fan_in=cfg.d_emb)
    for direction in ("fw", "bw"):
        p[f"lstm_{direction}.w_x"] = uniform_fan_in(rng, (cfg.d_emb, 4 * H))
        p[f"lstm_{direction}.w_h"] = uniform_fan_in(rng, (H, 4 * H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0  # forget gate
        p[f"lstm_{direction}.b"] = b
    for name in ("w_q", "w_k", "w_v"):
        p[f"attn.{name}"] = uniform_fan_in(rng, (2 * H, A))
    p["pool.w"] = uniform_fan_in(rng, (A,))
    p["intent.w"] = uniform_fan_in(rng, (A, n_intents))
    p["intent.b"] = np.zeros(n_intents)
    p["slot.w"] = uniform_fan_in(rng, (A, n_slots))
    p["slot.b"] = np.zeros(n_slots)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def _lstm(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> Tensor:
    """Unidirectional LSTM from zero state over axis 1; gate order i, f, g, o."""
    B, L, _ = x.shape
    H = w_h.shape[0]
    xw = transpose(linear(x, w_x, b), (1, 0, 2))  # [L, B, 4H]
    h = c = None
    outs = []
    for t in range(L):
        gates = xw[t] if h is None else xw[t] + h @ w_h
        act = sigmoid(gates)
        i, f, o = act[:, :H], act[:, H : 2 * H], act[:, 3 * H :]
        g = tanh(gates[:, 2 * H : 3 * H])
        c = i * g if c is None else f * c + i * g
        h = o * tanh(c)
        outs.append(h)
    return stack(outs, axis=1)


def _reverse_index(lengths: np.ndarray, L: int) -> np.ndarray:
    """Per-row permutation reversing the valid prefix and fixing the padding."""
    idx = np.tile(np.arange(L), (len(lengths), 1))
    for i, n in enumerate(lengths):
        idx[i, :n] = np.arange(n - 1, -1, -1)
    return idx


def _dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


def forward(
    batch: EncodedBatch,
    params: dict[str, Tensor],
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> StudentOutput:
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError(f"dropout_p must lie in [0, 1), got {dropout_p}")
    use_dropout = training and dropout_p > 0.0
    if use_dropout and rng is None:
        raise ValueError("training with dropout needs an rng")
    mask = batch.mask
    valid = (mask != 0)[:, :, None]
    B, L = batch.token_ids.shape

    x = embedding(params["embedding"], batch.token_ids)
    if use_dropout:
        x = _dropout(x, dropout_p, rng)

    fw = _lstm(x, params["lstm_fw.w_x"], params["lstm_fw.w_h"], params["lstm_fw.b"])
    rows = np.arange(B)[:, None]
    rev = _reverse_index(batch.lengths, L)
    bw = _lstm(x[rows, rev], params["lstm_bw.w_x"], params["lstm_bw.w_h"], params["lstm_bw.b"])[rows, rev]
    hidden = masked_fill(concat([fw, bw], axis=-1), valid)

    q = hidden @ params["attn.w_q"]
    k = hidden @ params["attn.w_k"]
    v = hidden @ params["attn.w_v"]
    scores = (q @ transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(q.shape[-1]))
    attn = softmax_masked(scores, mask[:, None, :])
    states = attn @ v + v
    if use_dropout:
        states = _dropout(states, dropout_p, rng)
    states = masked_fill(states, valid)

    pool_scores = reshape(states @ reshape(params["pool.w"], (-1, 1)), (B, L))
    alpha = softmax_masked(pool_scores, mask)
    sentence = reshape(reshape(alpha, (B, 1, L)) @ states, (B, -1))

    intent_logits = linear(sentence, params["intent.w"], params["intent.b"])
    slot_logits = masked_fill(linear(states, params["slot.w"], params["slot.b"]), valid)
    return StudentOutput(intent_logits, slot_logits, sentence, states)


def task_loss(out: StudentOutput, batch: EncodedBatch, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Intent cross-entropy plus token-averaged slot cross-entropy."""
    B, L, S = out.slot_logits.shape
    intent = cross_entropy(out.intent_logits, batch.intent_targets, ignore_index)
    slots = cross_entropy(reshape(out.slot_logits, (B * L, S)), batch.slot_targets.reshape(-1), ignore_index)
    return intent + slots


def predict(out: StudentOutput, batch: EncodedBatch) -> tuple[np.ndarray, list[np.ndarray]]:
    """Argmax intent ids and per-utterance argmax slot ids (valid positions only)."""
    intents = out.intent_logits.data.argmax(axis=1)
    slot_ids = out.slot_logits.data.argmax(axis=2)
    return intents, [slot_ids[i, :n] for i, n in enumerate(batch.lengths)]
