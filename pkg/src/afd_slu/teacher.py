"""Frozen teacher backends producing one sentence vector per utterance."""

from __future__ import annotations

import hashlib

import numpy as np

from .data import EncodedBatch, load_teacher_embeddings
from .ops import DegenerateMaskError
from .tensor import DimensionError, Tensor

__all__ = [
    "TeacherLookupError",
    "TeacherBackend",
    "FileTeacher",
    "SyntheticFrozenTeacher",
    "masked_mean_pool",
    "N_LAYERS",
]

N_LAYERS = 4


class TeacherLookupError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


def masked_mean_pool(hidden: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Average ``hidden[i, l]`` over positions with ``mask[i, l] == 1``.

    Only valid rows enter the sum, in position order, so the result does not
    depend on padded content or on how much padding there is.
    """
    B = hidden.shape[0]
    out = np.empty((B, hidden.shape[-1]))
    for i in range(B):
        idx = np.flatnonzero(mask[i] != 0)
        if idx.size == 0:
            raise DegenerateMaskError(f"batch row {i} has an all-zero mask")
        out[i] = hidden[i, idx].sum(axis=0) / idx.size
    return out


class TeacherBackend:
    d_et: int
    variant: str

    def embed(self, batch: EncodedBatch) -> Tensor:
        raise NotImplementedError

    def checksum(self) -> str:
        raise NotImplementedError


class FileTeacher(TeacherBackend):
    """Precomputed, already pooled sentence vectors keyed by utterance id."""

    variant = "file"

    def __init__(self, table: dict[str, np.ndarray], d_et: int):
        self.d_et = int(d_et)
        self._table = {}
        for uid, vec in table.items():
            vec = np.array(vec, dtype=np.float64)
            if vec.shape != (self.d_et,):
                raise DimensionError(f"teacher embedding for {uid!r} has shape {vec.shape}, expected ({self.d_et},)")
            vec.flags.writeable = False
            self._table[uid] = vec

    @classmethod
    def from_file(cls, path, d_et: int) -> FileTeacher:
        return cls(load_teacher_embeddings(path, d_et), d_et)

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, uid: str) -> bool:
        return uid in self._table

    def embed(self, batch: EncodedBatch) -> Tensor:
        rows = []
        for uid in batch.ids:
            try:
                rows.append(self._table[uid])
            except KeyError:
                raise TeacherLookupError(f"no teacher embedding for utterance {uid!r}") from None
        return Tensor(np.stack(rows))

    def checksum(self) -> str:
        h = hashlib.sha256(f"file:{self.d_et}".encode())
        for uid in sorted(self._table):
            h.update(uid.encode("utf-8") + b"\0")
            h.update(self._table[uid].tobytes())
        return h.hexdigest()


class SyntheticFrozenTeacher(TeacherBackend):
    """Random frozen encoder: per-layer linear maps of token embeddings.

    Layer ``k`` (of the last four) gives ``h_k[l] = M_k @ E[token_l]``. The
    sentence vector averages the four layers per position and then takes
    the masked mean over valid positions.
    """

    variant = "synthetic"

    def __init__(self, seed: int, vocab_size: int, d_et: int = 64):
        self.seed = int(seed)
        self.d_et = int(d_et)
        self.vocab_size = int(vocab_size)
        rng = np.random.default_rng([self.seed, 0x7EAC])
        self.token_embedding = rng.normal(0.0, 1.0, size=(self.vocab_size, self.d_et))
        self.mixing = rng.normal(0.0, 1.0 / np.sqrt(self.d_et), size=(N_LAYERS, self.d_et, self.d_et))
        self.token_embedding.flags.writeable = False
        self.mixing.flags.writeable = False

    @classmethod
    def from_arrays(cls, token_embedding: np.ndarray, mixing: np.ndarray, seed: int = -1) -> SyntheticFrozenTeacher:
        token_embedding = np.array(token_embedding, dtype=np.float64)
        mixing = np.array(mixing, dtype=np.float64)
        V, d = token_embedding.shape
        if mixing.shape != (N_LAYERS, d, d):
            raise DimensionError(f"mixing must have shape {(N_LAYERS, d, d)}, got {mixing.shape}")
        self = cls.__new__(cls)
        self.seed, self.vocab_size, self.d_et = seed, V, d
        self.token_embedding, self.mixing = token_embedding, mixing
        self.token_embedding.flags.writeable = False
        self.mixing.flags.writeable = False
        return self

    def hidden_states(self, token_ids: np.ndarray) -> np.ndarray:
        """Hidden states of the last four layers, shape [4, B, L, d_et]."""
        emb = self.token_embedding[np.asarray(token_ids)]
        return np.stack([emb @ self.mixing[k].T for k in range(N_LAYERS)])

    @staticmethod
    def pool(hidden: np.ndarray, mask: np.ndarray) -> np.ndarray:
        layer_avg = hidden.sum(axis=0) / hidden.shape[0]
        return masked_mean_pool(layer_avg, mask)

    def embed(self, batch: EncodedBatch) -> Tensor:
        if batch.token_ids.size and batch.token_ids.max() >= self.vocab_size:
            raise DimensionError(f"token id beyond teacher vocabulary of {self.vocab_size}")
        return Tensor(self.pool(self.hidden_states(batch.token_ids), batch.mask))

    def checksum(self) -> str:
        h = hashlib.sha256(f"synthetic:{self.seed}:{self.vocab_size}:{self.d_et}".encode())
        h.update(self.token_embedding.tobytes())
        h.update(self.mixing.tobytes())
        return h.hexdigest()
