"""Distillation training: cosine-scheduled loss weight, joint objective, Adam, ablations."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .adapter import init_adapter, project
from .config import ConfigError, DistillConfig, RunConfig
from .data import IGNORE_INDEX, LabelMaps, Utterance, encode_batch, iter_batches
from .model import Model, evaluate
from .ops import mse_sum
from .optim import Adam, clip_grad_norm
from .rng import stream
from .student import forward, init_student, task_loss
from .teacher import TeacherBackend
from .tensor import Tensor, as_tensor, backward, no_grad

__all__ = [
    "NonFiniteLossError",
    "ddc_lambda",
    "epoch_lambda",
    "total_loss",
    "TrainResult",
    "train",
    "ablate",
    "ABLATION_ARMS",
]

log = logging.getLogger(__name__)

ABLATION_ARMS = ("full", "no_rpnn", "no_ddc", "no_distill")


class NonFiniteLossError(FloatingPointError):
    pass


def ddc_lambda(e: float, cfg: DistillConfig) -> float:
    """Distillation weight at epoch ``e`` of ``cfg.epochs``.

    ``halved`` interpolates from ``lambda_initial`` at e=0 to ``lambda_final``
    at e=E along half a cosine. ``literal`` omits the 1/2, which starts at
    2*initial - final. Both end exactly at ``lambda_final``.
    """
    E = cfg.epochs
    if not 0 <= e <= E:
        raise ValueError(f"epoch {e} outside [0, {E}]")
    lam_i, lam_f = cfg.lambda_initial, cfg.lambda_final
    c = math.cos(math.pi * e / E)
    if cfg.schedule_variant == "literal":
        lam = lam_f + (lam_i - lam_f) * (1.0 + c)
    elif c > 0:
        # first half measured from lam_i so that e=0 gives it exactly
        lam = lam_i + (lam_f - lam_i) * ((1.0 - c) / 2.0)
    else:
        lam = lam_f + (lam_i - lam_f) * ((1.0 + c) / 2.0)
    if cfg.clamp_nonnegative:
        lam = max(0.0, lam)
    return lam


def epoch_lambda(e: int, cfg: DistillConfig) -> float:
    """Weight actually used in training, after applying the ablation switch."""
    if cfg.ablation == "no_distill":
        return 0.0
    if cfg.ablation == "no_ddc":
        return cfg.lambda_final
    return ddc_lambda(e, cfg)


def total_loss(task, distill, lam: float) -> Tensor:
    return as_tensor(task) + lam * as_tensor(distill)


@dataclass
class TrainResult:
    model: Model  # best dev checkpoint
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    final: Model | None = None

    def log_lines(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def train(
    train_utts: Sequence[Utterance],
    dev_utts: Sequence[Utterance],
    maps: LabelMaps,
    teacher: TeacherBackend | None,
    cfg: RunConfig,
    seed: int | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train student and adapter; the teacher is only read.

    The model kept is the one with the best dev overall accuracy (earliest
    epoch on ties). With an empty ``dev_utts`` the last epoch is kept.
    """
    seed = cfg.seed if seed is None else seed
    dcfg = cfg.distill
    distilling = dcfg.ablation != "no_distill"
    if distilling:
        if teacher is None:
            raise ConfigError("distillation needs a teacher backend")
        if teacher.d_et != cfg.d_et:
            raise ConfigError(f"teacher d_et={teacher.d_et} does not match config d_et={cfg.d_et}")
    if not train_utts:
        raise ValueError("empty training corpus")

    init_rng = stream(seed, "init")
    student = init_student(cfg.student, maps.n_tokens, maps.n_intents, maps.n_slots, init_rng)
    kind = "linear" if dcfg.ablation == "no_rpnn" else "rpnn"
    adapter = init_adapter(cfg.adapter, cfg.student.d_es, cfg.d_et, init_rng, kind=kind)
    model = Model(cfg, maps, student, adapter, kind)

    params = model.trainable()
    ocfg = cfg.optim
    opt = Adam(params, lr=ocfg.lr, betas=(ocfg.beta1, ocfg.beta2), eps=ocfg.eps)
    shuffle_rng = stream(seed, "shuffle")
    dropout_rng = stream(seed, "dropout")

    result = TrainResult(model=model.snapshot())
    best_score = -1.0
    for epoch in range(dcfg.epochs):
        lam = epoch_lambda(epoch, dcfg)
        order = shuffle_rng.permutation(len(train_utts))
        task_sum = distill_sum = 0.0
        n_batches = 0
        for chunk in iter_batches(train_utts, ocfg.batch_size, order):
            batch = encode_batch(chunk, maps, strict=True, ignore_index=IGNORE_INDEX)
            out = forward(batch, student, cfg.student.dropout, training=True, rng=dropout_rng)
            l_task = task_loss(out, batch)
            l_distill = None
            loss = l_task
            if distilling:
                e_t = teacher.embed(batch)
                if lam == 0.0:
                    # a zero weight adds nothing; keeping the branch off the tape
                    # also keeps gradient summation order equal to a plain step
                    with no_grad():
                        l_distill = mse_sum(e_t, project(out.sentence, adapter, cfg.adapter.ln_eps))
                else:
                    l_distill = mse_sum(e_t, project(out.sentence, adapter, cfg.adapter.ln_eps))
                    loss = total_loss(l_task, l_distill, lam)
            if not np.isfinite(loss.data) or (l_distill is not None and not np.isfinite(l_distill.data)):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} in batch starting with {batch.ids[0]!r} "
                    f"(task={l_task.item()}, distill={None if l_distill is None else l_distill.item()})"
                )
            by_tensor = backward(loss)
            grads = {name: by_tensor[p] for name, p in params.items() if p in by_tensor}
            clip_grad_norm(grads, ocfg.clip_norm)
            opt.step(grads)
            task_sum += l_task.item()
            if l_distill is not None:
                distill_sum += l_distill.item()
            n_batches += 1

        record = {
            "epoch": epoch,
            "lambda": lam,
            "task_loss": task_sum / n_batches,
            "distill_loss": distill_sum / n_batches if distilling else None,
        }
        if dev_utts:
            metrics = evaluate(model, dev_utts, ocfg.eval_batch_size)
            record["dev"] = metrics.as_dict()
            if metrics.overall_acc > best_score:
                best_score = metrics.overall_acc
                result.model = model.snapshot()
                result.best_epoch = epoch
        else:
            result.model = model.snapshot()
            result.best_epoch = epoch
        result.log.append(record)
        log.debug("epoch %d: %s", epoch, record)
        if on_epoch is not None:
            on_epoch(record)
    result.final = model
    return result


def _summary(values: list[float]) -> dict[str, float]:
    arr = np.array(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}


def ablate(
    train_utts: Sequence[Utterance],
    dev_utts: Sequence[Utterance],
    test_utts: Sequence[Utterance],
    maps: LabelMaps,
    teacher: TeacherBackend,
    cfg: RunConfig,
    seeds: Sequence[int],
    arms: Sequence[str] = ABLATION_ARMS,
) -> dict:
    """Train every arm on every seed and report mean/std test metrics per arm.

    Rows mirror an ablation table: the full method, the adapter replaced by
    one linear map, the schedule replaced by a constant weight, and a plain
    student without distillation.
    """
    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    eval_on = test_utts if test_utts else dev_utts
    per_seed: dict[str, list[dict]] = {}
    for arm in arms:
        arm_cfg = cfg.replace(**{"distill.ablation": arm})
        rows = []
        for s in seeds:
            res = train(train_utts, dev_utts, maps, teacher, arm_cfg, seed=s)
            m = evaluate(res.model, eval_on, cfg.optim.eval_batch_size)
            rows.append({"seed": s, "best_epoch": res.best_epoch, **m.as_dict()})
            log.info("ablate %s seed %d: %s", arm, s, m.as_dict())
        per_seed[arm] = rows
    report = {
        "split": "test" if test_utts else "dev",
        "seeds": list(seeds),
        "arms": {
            arm: {k: _summary([r[k] for r in rows]) for k in ("intent_acc", "slot_f1", "overall_acc")}
            for arm, rows in per_seed.items()
        },
        "per_seed": per_seed,
    }
    return report
