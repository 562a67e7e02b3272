"""Synthetic joint intent/slot corpus with label-bearing teacher embeddings.

Each intent owns a few templates over keyword, filler and slot positions.
Slot values come from per-slot-type sub-vocabularies, keywords from
per-intent ones; both are occasionally swapped for a token from another
pool so the surface form alone is ambiguous. The teacher vector of an
utterance is a fixed random projection of its (intent one-hot, slot-type
count) indicator plus Gaussian noise, so it carries exactly the label
information a distilled student can exploit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Utterance, write_corpus, write_teacher_embeddings

__all__ = ["SynthConfig", "SyntheticCorpus", "ConfigError", "gen_synthetic", "write_synthetic", "indicator"]


class ConfigError(ValueError):
    """Generator settings cannot be satisfied."""


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 500
    n_dev: int = 100
    n_test: int = 100
    vocab: int = 200
    n_intents: int = 4
    n_slot_types: int = 6
    d_et: int = 64
    noise_sigma: float = 0.05
    templates_per_intent: int = 3
    slots_per_intent: int = 3
    keyword_noise: float = 0.5
    value_noise: float = 0.05
    min_slot_pool: int = 2
    max_span: int = 2

    def validate(self) -> None:
        for name in ("n_train", "n_dev", "n_test", "vocab", "n_intents", "n_slot_types", "d_et"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (0.0 <= self.keyword_noise <= 1.0 and 0.0 <= self.value_noise <= 1.0):
            raise ConfigError("noise probabilities must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        fill, kw, slot = _pool_sizes(self)
        if slot < self.min_slot_pool:
            raise ConfigError(
                f"vocab={self.vocab} cannot hold {self.n_slot_types} slot types "
                f"(needs >= {self.min_slot_pool} value tokens each)"
            )


@dataclass
class SyntheticCorpus:
    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]
    teacher: dict[str, np.ndarray]
    projection: np.ndarray
    config: SynthConfig


def _pool_sizes(cfg: SynthConfig) -> tuple[int, int, int]:
    """Sizes of the filler pool and each per-intent / per-slot-type pool."""
    n_fill = max(1, cfg.vocab // 5)
    n_kw = max(1, (cfg.vocab * 3 // 10) // cfg.n_intents)
    rest = cfg.vocab - n_fill - n_kw * cfg.n_intents
    return n_fill, n_kw, rest // cfg.n_slot_types


def indicator(intent: int, slot_types: list[int], n_intents: int, n_slot_types: int) -> np.ndarray:
    v = np.zeros(n_intents + n_slot_types)
    v[intent] = 1.0
    for s in slot_types:
        v[n_intents + s] += 1.0
    return v


def gen_synthetic(seed: int, cfg: SynthConfig | None = None, **overrides) -> SyntheticCorpus:
    """Generate train/dev/test splits and teacher vectors, deterministically in ``seed``."""
    cfg = cfg or SynthConfig()
    if overrides:
        cfg = SynthConfig(**{**cfg.__dict__, **overrides})
    cfg.validate()
    rng = np.random.default_rng([int(seed), 0x5EED])
    n_fill, n_kw, n_slot = _pool_sizes(cfg)

    words = [f"w{k}" for k in range(cfg.vocab)]
    fillers = words[:n_fill]
    kw_pools = [words[n_fill + i * n_kw : n_fill + (i + 1) * n_kw] for i in range(cfg.n_intents)]
    base = n_fill + n_kw * cfg.n_intents
    value_pools = [words[base + s * n_slot : base + (s + 1) * n_slot] for s in range(cfg.n_slot_types)]
    intent_names = [f"intent_{i}" for i in range(cfg.n_intents)]
    slot_names = [f"slot_{s}" for s in range(cfg.n_slot_types)]

    # templates: lists of ("kw",) / ("fill",) / ("slot", s)
    templates, template_p = [], []
    for i in range(cfg.n_intents):
        k = min(cfg.slots_per_intent, cfg.n_slot_types)
        preferred = rng.choice(cfg.n_slot_types, size=k, replace=False)
        own = []
        for _ in range(cfg.templates_per_intent):
            n_slots = int(rng.integers(1, k + 1))
            slots = [("slot", int(s)) for s in rng.choice(preferred, size=n_slots, replace=True)]
            others = [("kw",)] + [("fill",)] * int(rng.integers(0, 3))
            others = [others[j] for j in rng.permutation(len(others))]
            # slot spans never touch, so chunk boundaries stay recoverable
            while len(others) < n_slots - 1:
                others.append(("fill",))
            seq = list(others[: n_slots - 1])
            rest = others[n_slots - 1 :]
            parts = [slots[0]]
            for sep, slot in zip(seq, slots[1:]):
                parts += [sep, slot]
            for extra in rest:
                if rng.random() < 0.5:
                    parts.insert(0, extra)
                else:
                    parts.append(extra)
            own.append(parts)
        templates.append(own)
        template_p.append(rng.dirichlet(np.ones(cfg.templates_per_intent)))

    n_feat = cfg.n_intents + cfg.n_slot_types
    projection = rng.normal(0.0, 1.0 / np.sqrt(cfg.d_et), size=(n_feat, cfg.d_et))

    def sample(uid: str) -> tuple[Utterance, np.ndarray]:
        intent = int(rng.integers(cfg.n_intents))
        tpl = templates[intent][int(rng.choice(cfg.templates_per_intent, p=template_p[intent]))]
        tokens, tags, used = [], [], []
        for part in tpl:
            if part[0] == "kw":
                pool = kw_pools[intent]
                if cfg.n_intents > 1 and rng.random() < cfg.keyword_noise:
                    pool = kw_pools[int(rng.integers(cfg.n_intents))]
                tokens.append(str(rng.choice(pool)))
                tags.append("O")
            elif part[0] == "fill":
                tokens.append(str(rng.choice(fillers)))
                tags.append("O")
            else:
                s = part[1]
                used.append(s)
                span = int(rng.integers(1, cfg.max_span + 1))
                for j in range(span):
                    pool = value_pools[s]
                    if rng.random() < cfg.value_noise:
                        pool = value_pools[int(rng.integers(cfg.n_slot_types))]
                    tokens.append(str(rng.choice(pool)))
                    tags.append(("B-" if j == 0 else "I-") + slot_names[s])
        vec = indicator(intent, used, cfg.n_intents, cfg.n_slot_types) @ projection
        vec = vec + rng.normal(0.0, cfg.noise_sigma, size=cfg.d_et)
        return Utterance(uid, tuple(tokens), tuple(tags), intent_names[intent]), vec

    splits, teacher = {}, {}
    for name, n in (("train", cfg.n_train), ("dev", cfg.n_dev), ("test", cfg.n_test)):
        rows = []
        for k in range(n):
            u, vec = sample(f"{name}-{k:05d}")
            rows.append(u)
            teacher[u.id] = vec
        splits[name] = rows
    return SyntheticCorpus(splits["train"], splits["dev"], splits["test"], teacher, projection, cfg)


def write_synthetic(out_dir, corpus: SyntheticCorpus) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "dev", "test"):
        paths[name] = out / f"{name}.jsonl"
        write_corpus(paths[name], getattr(corpus, name))
    paths["teacher"] = out / "teacher.jsonl"
    write_teacher_embeddings(paths["teacher"], corpus.teacher)
    return paths
