"""Intent accuracy, entity-level slot F1 and overall (sentence) accuracy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .data import bio_chunks

__all__ = ["Metrics", "chunk_counts", "slot_f1", "compute_metrics"]


@dataclass(frozen=True)
class Metrics:
    """All three scores are percentages in [0, 100]."""

    intent_acc: float
    slot_f1: float
    overall_acc: float

    def rounded(self, ndigits: int = 2) -> dict[str, float]:
        return {k: round(v, ndigits) for k, v in asdict(self).items()}

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def chunk_counts(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> tuple[int, int, int]:
    """(true positives, predicted chunks, gold chunks) summed over sentences."""
    tp = n_pred = n_gold = 0
    for g, p in zip(gold, pred, strict=True):
        gc, pc = bio_chunks(g), bio_chunks(p)
        tp += len(gc & pc)
        n_pred += len(pc)
        n_gold += len(gc)
    return tp, n_pred, n_gold


def slot_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> float:
    """Micro F1 over exact (type, start, end) chunk matches, in percent.

    When neither side has a chunk the prediction is perfect and scores 100.
    """
    tp, n_pred, n_gold = chunk_counts(gold, pred)
    if n_pred == 0 and n_gold == 0:
        return 100.0
    return 100.0 * 2 * tp / (n_pred + n_gold)


def compute_metrics(
    gold_intents: Sequence[str],
    pred_intents: Sequence[str],
    gold_tags: Sequence[Sequence[str]],
    pred_tags: Sequence[Sequence[str]],
) -> Metrics:
    n = len(gold_intents)
    if n == 0:
        raise ValueError("cannot score an empty set of utterances")
    if not (len(pred_intents) == len(gold_tags) == len(pred_tags) == n):
        raise ValueError("gold and predicted sequences differ in length")
    intent_ok = [g == p for g, p in zip(gold_intents, pred_intents)]
    both_ok = [ok and list(g) == list(p) for ok, g, p in zip(intent_ok, gold_tags, pred_tags)]
    return Metrics(
        intent_acc=100.0 * sum(intent_ok) / n,
        slot_f1=slot_f1(gold_tags, pred_tags),
        overall_acc=100.0 * sum(both_ok) / n,
    )
