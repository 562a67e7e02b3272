"""Trained model bundle, checkpoint serialization and evaluation.

Checkpoint layout (UTF-8 JSON, keys sorted, no whitespace)::

    {
      "format": "afd-slu-checkpoint",
      "version": 1,
      "config": {...effective RunConfig...},
      "labels": {"intents": [...], "slots": [...], "tokens": [...]},
      "adapter_kind": "rpnn" | "linear",
      "d_et": 64,
      "params": {
        "student": {name: {"shape": [...], "data": base64(float64 little-endian)}},
        "adapter": {...same...}
      }
    }

Raw float bytes make the round trip bit-exact.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adapter import project
from .config import RunConfig
from .data import LabelMaps, Utterance, encode_batch, iter_batches
from .metrics import Metrics, compute_metrics
from .student import StudentOutput, forward, predict
from .tensor import Tensor, no_grad

__all__ = ["Model", "CheckpointError", "save_checkpoint", "load_checkpoint", "file_digest", "evaluate", "FORMAT", "VERSION"]

FORMAT = "afd-slu-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Model:
    config: RunConfig
    maps: LabelMaps
    student: dict[str, Tensor]
    adapter: dict[str, Tensor]
    adapter_kind: str

    @property
    def d_et(self) -> int:
        return self.config.d_et

    def trainable(self) -> dict[str, Tensor]:
        out = {f"student.{k}": v for k, v in self.student.items()}
        out.update({f"adapter.{k}": v for k, v in self.adapter.items()})
        return out

    def snapshot(self) -> Model:
        """Deep copy of the parameter values."""
        copy = lambda ps: {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in ps.items()}
        return Model(self.config, self.maps, copy(self.student), copy(self.adapter), self.adapter_kind)

    def run(self, utts: Sequence[Utterance]) -> tuple[StudentOutput, Tensor]:
        """Eval-mode forward on one batch: student output and projected sentence vector."""
        batch = encode_batch(utts, self.maps, strict=False)
        with no_grad():
            out = forward(batch, self.student)
            return out, project(out.sentence, self.adapter, self.config.adapter.ln_eps)

    def predict(self, utts: Sequence[Utterance], batch_size: int = 64) -> tuple[list[str], list[list[str]]]:
        intents: list[str] = []
        tags: list[list[str]] = []
        with no_grad():
            for chunk in iter_batches(utts, batch_size):
                batch = encode_batch(chunk, self.maps, strict=False)
                intent_ids, slot_ids = predict(forward(batch, self.student), batch)
                intents.extend(self.maps.intents[i] for i in intent_ids)
                tags.extend([self.maps.slots[j] for j in row] for row in slot_ids)
        return intents, tags


def evaluate(model: Model, utts: Sequence[Utterance], batch_size: int = 64) -> Metrics:
    """Score ``model`` on ``utts``. Labels unseen in training simply count as errors."""
    if not utts:
        raise ValueError("cannot evaluate on an empty corpus")
    pred_intents, pred_tags = model.predict(utts, batch_size)
    return compute_metrics([u.intent for u in utts], pred_intents, [u.slot_tags for u in utts], pred_tags)


def _encode_params(params: dict[str, Tensor]) -> dict:
    return {
        k: {
            "shape": list(v.shape),
            "data": base64.b64encode(np.ascontiguousarray(v.data, dtype="<f8").tobytes()).decode("ascii"),
        }
        for k, v in params.items()
    }


def _decode_params(d: dict) -> dict[str, Tensor]:
    out = {}
    for k, rec in d.items():
        raw = base64.b64decode(rec["data"])
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rec["shape"])
        out[k] = Tensor(arr, requires_grad=True, name=k)
    return out


def checkpoint_bytes(model: Model) -> bytes:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "labels": model.maps.to_dict(),
        "adapter_kind": model.adapter_kind,
        "d_et": model.d_et,
        "params": {"student": _encode_params(model.student), "adapter": _encode_params(model.adapter)},
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def save_checkpoint(model: Model, path) -> str:
    """Write the checkpoint and return its sha256 digest."""
    data = checkpoint_bytes(model)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({exc.msg})") from None
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return Model(
        config=RunConfig.from_dict(doc["config"]),
        maps=LabelMaps.from_dict(doc["labels"]),
        student=_decode_params(doc["params"]["student"]),
        adapter=_decode_params(doc["params"]["adapter"]),
        adapter_kind=doc["adapter_kind"],
    )


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
