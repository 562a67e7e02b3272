"""Run configuration: one JSON document covering every module.

Unknown keys are rejected at every nesting level; missing keys take the
defaults declared here.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .adapter import AdapterConfig
from .student import StudentConfig

__all__ = [
    "ConfigError",
    "DistillConfig",
    "OptimConfig",
    "PathsConfig",
    "RunConfig",
    "SCHEDULE_VARIANTS",
    "ABLATIONS",
]

SCHEDULE_VARIANTS = ("halved", "literal")
ABLATIONS = ("full", "no_rpnn", "no_ddc", "no_distill")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    lambda_initial: float = 0.1
    lambda_final: float = 0.7
    epochs: int = 50
    schedule_variant: str = "halved"
    clamp_nonnegative: bool = True
    ablation: str = "full"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lambda_initial < 0 or self.lambda_final < 0:
            raise ConfigError("lambda values must be >= 0")
        if self.schedule_variant not in SCHEDULE_VARIANTS:
            raise ConfigError(f"schedule_variant must be one of {SCHEDULE_VARIANTS}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 16
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")


@dataclass(frozen=True)
class PathsConfig:
    data: str | None = None
    teacher: str | None = None
    log: str | None = None
    out: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    d_et: int = 64
    student: StudentConfig = field(default_factory=StudentConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.d_et < 1:
            raise ConfigError("d_et must be >= 1")
        if not 0.0 <= self.student.dropout < 1.0:
            raise ConfigError("student.dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, path) -> RunConfig:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(d)

    def replace(self, **changes) -> RunConfig:
        """Copy with top-level or dotted (``"distill.epochs"``) fields changed."""
        d = self.to_dict()
        for key, value in changes.items():
            *head, last = key.replace("__", ".").split(".")
            node = d
            for h in head:
                node = node[h]
            if last not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[last] = value
        return RunConfig.from_dict(d)


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get((cls, name))
        if sub:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
            continue
        if not _type_ok(fields[name].type, value):
            raise ConfigError(f"{where}.{name}: expected {fields[name].type}, got {value!r}")
        kwargs[name] = float(value) if fields[name].type == "float" else value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _type_ok(annotation: str, value) -> bool:
    if annotation == "bool":
        return isinstance(value, bool)
    if annotation == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation == "str":
        return isinstance(value, str)
    if annotation == "str | None":
        return value is None or isinstance(value, str)
    return True


_NESTED = {
    (RunConfig, "student"): StudentConfig,
    (RunConfig, "adapter"): AdapterConfig,
    (RunConfig, "distill"): DistillConfig,
    (RunConfig, "optim"): OptimConfig,
    (RunConfig, "paths"): PathsConfig,
}
