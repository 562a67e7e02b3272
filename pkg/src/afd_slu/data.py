"""Corpus and teacher-embedding I/O, label maps and batch encoding.

Corpora are UTF-8 JSON lines with exactly the keys ``id``, ``tokens``,
``slots`` and ``intent``. Teacher embeddings are JSON lines with ``id`` and
``embedding``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tensor import DimensionError

__all__ = [
    "PAD",
    "UNK",
    "PAD_ID",
    "UNK_ID",
    "IGNORE_INDEX",
    "CorpusError",
    "BIOError",
    "DuplicateIdError",
    "LabelError",
    "Utterance",
    "LabelMaps",
    "EncodedBatch",
    "validate_bio",
    "bio_chunks",
    "read_corpus",
    "write_corpus",
    "load_corpus",
    "build_label_maps",
    "encode_batch",
    "iter_batches",
    "load_teacher_embeddings",
    "write_teacher_embeddings",
]

PAD = "<pad>"
UNK = "<unk>"
PAD_ID = 0
UNK_ID = 1
IGNORE_INDEX = -100

CORPUS_KEYS = ("id", "tokens", "slots", "intent")
EMBEDDING_KEYS = ("id", "embedding")


class CorpusError(ValueError):
    """A corpus or embedding file could not be parsed."""


class BIOError(CorpusError):
    """A slot tag sequence is not valid BIO."""


class DuplicateIdError(CorpusError):
    """Two records share an id."""


class LabelError(KeyError):
    """A label was not seen when the label maps were built."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Utterance:
    id: str
    tokens: tuple[str, ...]
    slot_tags: tuple[str, ...]
    intent: str

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise CorpusError(f"utterance {self.id!r} has no tokens")
        if len(self.tokens) != len(self.slot_tags):
            raise CorpusError(
                f"utterance {self.id!r}: {len(self.tokens)} tokens but {len(self.slot_tags)} slot tags"
            )
        validate_bio(self.slot_tags, self.id)

    def to_json(self) -> str:
        rec = {"id": self.id, "tokens": list(self.tokens), "slots": list(self.slot_tags), "intent": self.intent}
        return json.dumps(rec, ensure_ascii=False)


def validate_bio(tags: Sequence[str], uid: str = "?") -> None:
    prev = "O"
    for pos, tag in enumerate(tags):
        if tag != "O":
            head, sep, label = tag.partition("-")
            if head not in ("B", "I") or not sep or not label:
                raise BIOError(f"utterance {uid!r}: malformed tag {tag!r} at position {pos}")
            if head == "I" and prev[2:] != label:
                raise BIOError(f"utterance {uid!r}: {tag!r} at position {pos} does not continue a {label} chunk")
        prev = tag


def bio_chunks(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Chunks as ``(type, start, end)`` with inclusive ends.

    A chunk is a maximal ``B-X (I-X)*`` run. An ``I-X`` that does not continue
    an open ``X`` chunk is not part of any chunk (possible in raw predictions).
    """
    chunks = set()
    cur_type, start = None, -1
    for pos, tag in enumerate(tags):
        if tag.startswith("I-") and cur_type == tag[2:]:
            continue
        if cur_type is not None:
            chunks.add((cur_type, start, pos - 1))
            cur_type = None
        if tag.startswith("B-"):
            cur_type, start = tag[2:], pos
    if cur_type is not None:
        chunks.add((cur_type, start, len(tags) - 1))
    return chunks


def _parse_lines(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def read_corpus(path) -> list[Utterance]:
    """Read and validate every utterance in a JSONL corpus file."""
    path = Path(path)
    utts: list[Utterance] = []
    seen: set[str] = set()
    for lineno, rec in _parse_lines(path):
        if tuple(sorted(rec)) != tuple(sorted(CORPUS_KEYS)):
            raise CorpusError(f"{path}:{lineno}: keys must be exactly {list(CORPUS_KEYS)}, got {sorted(rec)}")
        uid, tokens, slots, intent = rec["id"], rec["tokens"], rec["slots"], rec["intent"]
        if not isinstance(uid, str) or not isinstance(intent, str):
            raise CorpusError(f"{path}:{lineno}: id and intent must be strings")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise CorpusError(f"{path}:{lineno}: tokens must be a list of strings")
        if not isinstance(slots, list) or not all(isinstance(t, str) for t in slots):
            raise CorpusError(f"{path}:{lineno}: slots must be a list of strings")
        if uid in seen:
            raise DuplicateIdError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
        seen.add(uid)
        utts.append(Utterance(uid, tuple(tokens), tuple(slots), intent))
    return utts


def write_corpus(path, utts: Iterable[Utterance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in utts:
            fh.write(u.to_json() + "\n")


@dataclass
class LabelMaps:
    """Index maps for intents, slot tags and tokens.

    Tokens reserve ``PAD_ID`` and ``UNK_ID``; every other map is dense from 0
    in sorted label order.
    """

    intents: list[str]
    slots: list[str]
    tokens: list[str]
    intent_index: dict[str, int] = field(init=False, repr=False)
    slot_index: dict[str, int] = field(init=False, repr=False)
    token_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ValueError("token vocabulary must start with PAD and UNK")
        self.intent_index = {s: i for i, s in enumerate(self.intents)}
        self.slot_index = {s: i for i, s in enumerate(self.slots)}
        self.token_index = {s: i for i, s in enumerate(self.tokens)}
        for name, seq, idx in (
            ("intent", self.intents, self.intent_index),
            ("slot", self.slots, self.slot_index),
            ("token", self.tokens, self.token_index),
        ):
            if len(idx) != len(seq):
                raise ValueError(f"{name} vocabulary has duplicate entries")

    @property
    def n_intents(self) -> int:
        return len(self.intents)

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def to_dict(self) -> dict:
        return {"intents": list(self.intents), "slots": list(self.slots), "tokens": list(self.tokens)}

    @classmethod
    def from_dict(cls, d: dict) -> LabelMaps:
        return cls(list(d["intents"]), list(d["slots"]), list(d["tokens"]))


def build_label_maps(utts: Iterable[Utterance]) -> LabelMaps:
    intents, slots, tokens = set(), set(), set()
    for u in utts:
        intents.add(u.intent)
        slots.update(u.slot_tags)
        tokens.update(u.tokens)
    tokens.discard(PAD)
    tokens.discard(UNK)
    return LabelMaps(sorted(intents), sorted(slots), [PAD, UNK] + sorted(tokens))


def load_corpus(path) -> tuple[list[Utterance], LabelMaps]:
    """Read a training corpus and build label maps from it."""
    utts = read_corpus(path)
    return utts, build_label_maps(utts)


@dataclass
class EncodedBatch:
    token_ids: np.ndarray  # int64 [B, L]
    mask: np.ndarray  # float64 [B, L], 1 on real tokens
    intent_targets: np.ndarray  # int64 [B]
    slot_targets: np.ndarray  # int64 [B, L], IGNORE_INDEX on padding
    ids: list[str]
    lengths: np.ndarray  # int64 [B]

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def max_len(self) -> int:
        return self.token_ids.shape[1]


def encode_batch(
    utts: Sequence[Utterance],
    maps: LabelMaps,
    strict: bool = True,
    ignore_index: int = IGNORE_INDEX,
    pad_to: int | None = None,
) -> EncodedBatch:
    """Pad a list of utterances to the longest one (or ``pad_to``).

    With ``strict`` an intent or slot tag missing from ``maps`` raises
    :class:`LabelError`; otherwise it becomes ``ignore_index``.
    """
    if not utts:
        raise ValueError("encode_batch needs at least one utterance")
    lengths = np.array([len(u.tokens) for u in utts], dtype=np.int64)
    L = int(lengths.max())
    if pad_to is not None:
        if pad_to < L:
            raise DimensionError(f"pad_to={pad_to} is shorter than the longest utterance ({L})")
        L = pad_to
    B = len(utts)
    token_ids = np.full((B, L), PAD_ID, dtype=np.int64)
    slot_targets = np.full((B, L), ignore_index, dtype=np.int64)
    intent_targets = np.empty(B, dtype=np.int64)
    mask = np.zeros((B, L))
    tok = maps.token_index

    def lookup(table: dict[str, int], label: str, kind: str, uid: str) -> int:
        try:
            return table[label]
        except KeyError:
            if strict:
                raise LabelError(f"utterance {uid!r}: unknown {kind} label {label!r}") from None
            return ignore_index

    for i, u in enumerate(utts):
        n = len(u.tokens)
        token_ids[i, :n] = [tok.get(t, UNK_ID) for t in u.tokens]
        mask[i, :n] = 1.0
        slot_targets[i, :n] = [lookup(maps.slot_index, t, "slot", u.id) for t in u.slot_tags]
        intent_targets[i] = lookup(maps.intent_index, u.intent, "intent", u.id)
    return EncodedBatch(token_ids, mask, intent_targets, slot_targets, [u.id for u in utts], lengths)


def iter_batches(utts: Sequence[Utterance], batch_size: int, order: Sequence[int] | None = None):
    """Yield lists of utterances, ``batch_size`` at a time, in ``order``."""
    idx = range(len(utts)) if order is None else order
    idx = list(idx)
    for start in range(0, len(idx), batch_size):
        yield [utts[k] for k in idx[start : start + batch_size]]


def load_teacher_embeddings(path, d_et: int) -> dict[str, np.ndarray]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    for lineno, rec in _parse_lines(path):
        if tuple(sorted(rec)) != tuple(sorted(EMBEDDING_KEYS)):
            raise CorpusError(f"{path}:{lineno}: keys must be exactly {list(EMBEDDING_KEYS)}")
        uid, emb = rec["id"], rec["embedding"]
        if not isinstance(uid, str):
            raise CorpusError(f"{path}:{lineno}: id must be a string")
        if not isinstance(emb, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in emb):
            raise CorpusError(f"{path}:{lineno}: embedding for {uid!r} must be a list of numbers")
        if len(emb) != d_et:
            raise DimensionError(f"teacher embedding for {uid!r} has length {len(emb)}, expected {d_et}")
        if uid in out:
            raise DuplicateIdError(f"{path}:{lineno}: duplicate embedding id {uid!r}")
        vec = np.array(emb, dtype=np.float64)
        if not np.isfinite(vec).all():
            raise CorpusError(f"{path}:{lineno}: embedding for {uid!r} is not finite")
        out[uid] = vec
    return out


def write_teacher_embeddings(path, table: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, vec in table.items():
            fh.write(json.dumps({"id": uid, "embedding": [float(v) for v in vec]}) + "\n")
