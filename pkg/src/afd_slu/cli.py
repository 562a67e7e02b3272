"""Command-line entry point: ``afd-slu <command> ...``.

stdout carries only the requested artifact (metrics, report, table);
diagnostics go to stderr. Failures print one JSON line
``{"error": <kind>, "message": <text>}`` to stderr and exit nonzero
(2 for usage errors, 1 for everything else).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .data import CorpusError, LabelError, LabelMaps, build_label_maps, load_teacher_embeddings, read_corpus
from .gradsuite import TOLERANCE, run_suite
from .model import CheckpointError, evaluate, load_checkpoint, save_checkpoint
from .synthetic import SynthConfig, gen_synthetic, write_synthetic
from .synthetic import ConfigError as SynthConfigError
from .teacher import FileTeacher, SyntheticFrozenTeacher, TeacherBackend, TeacherLookupError
from .tensor import DimensionError
from .trainer import ABLATION_ARMS, NonFiniteLossError, ablate, ddc_lambda, train

log = logging.getLogger("afd_slu")

SPLITS = ("train", "dev", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.from_json(path) if path else RunConfig()


def _split_path(data: str, split: str) -> Path:
    p = Path(data)
    if p.is_dir():
        p = p / f"{split}.jsonl"
    if not p.exists():
        raise FileNotFoundError(f"no {split} split at {p}")
    return p


def _read_split(data: str, split: str, required: bool = True):
    try:
        return read_corpus(_split_path(data, split))
    except FileNotFoundError:
        if required:
            raise
        return []


def make_teacher(uri: str | None, maps: LabelMaps, d_et: int) -> TeacherBackend | None:
    """``file:PATH`` for precomputed embeddings, ``synth:SEED`` for the synthetic frozen encoder."""
    if uri is None:
        return None
    kind, _, arg = uri.partition(":")
    if kind == "file" and arg:
        return FileTeacher(load_teacher_embeddings(arg, d_et), d_et)
    if kind == "synth" and arg:
        try:
            seed = int(arg)
        except ValueError:
            raise UsageError(f"synth teacher seed must be an integer, got {arg!r}") from None
        return SyntheticFrozenTeacher(seed, maps.n_tokens, d_et)
    raise UsageError(f"teacher must be file:PATH or synth:SEED, got {uri!r}")


def _resolved(cfg: RunConfig, **paths) -> RunConfig:
    changes = {f"paths.{k}": v for k, v in paths.items() if v is not None}
    return cfg.replace(**changes) if changes else cfg


def _without_paths(cfg: RunConfig) -> RunConfig:
    # paths are run plumbing; keeping them out of checkpoints makes digests
    # depend only on data, config and seed
    return cfg.replace(**{"paths.data": None, "paths.teacher": None, "paths.log": None, "paths.out": None})


# ---------------------------------------------------------------- commands

def cmd_gen_synth(args) -> int:
    fields = SynthConfig.__dataclass_fields__
    overrides = {k: getattr(args, k) for k in fields if getattr(args, k, None) is not None}
    corpus = gen_synthetic(args.seed, SynthConfig(**overrides))
    paths = write_synthetic(args.out, corpus)
    _emit({name: str(p) for name, p in paths.items()})
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    cfg = _resolved(cfg, data=args.data, teacher=args.teacher, log=args.log, out=args.out)
    if cfg.paths.data is None or cfg.paths.out is None:
        raise UsageError("train needs --data and --out (or paths.data / paths.out in the config)")
    train_utts = _read_split(cfg.paths.data, "train")
    dev_utts = _read_split(cfg.paths.data, "dev", required=False)
    maps = build_label_maps(train_utts)
    teacher = None
    if cfg.distill.ablation != "no_distill":
        if cfg.paths.teacher is None:
            raise UsageError("distillation needs --teacher file:PATH or synth:SEED")
        teacher = make_teacher(cfg.paths.teacher, maps, cfg.d_et)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(cfg.paths.log) if cfg.paths.log else out / "train_log.jsonl"
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    before = teacher.checksum() if teacher is not None else None
    with open(log_path, "w", encoding="utf-8") as fh:

        def on_epoch(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            log.info("epoch %d lambda=%.4f task=%.4f", rec["epoch"], rec["lambda"], rec["task_loss"])

        result = train(train_utts, dev_utts, maps, teacher, _without_paths(cfg), on_epoch=on_epoch)
    if teacher is not None and teacher.checksum() != before:
        raise RuntimeError("teacher parameters changed during training")
    ckpt = out / "checkpoint.json"
    digest = save_checkpoint(result.model, ckpt)
    _emit({"checkpoint": str(ckpt), "digest": digest, "best_epoch": result.best_epoch, "log": str(log_path)})
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    utts = _read_split(args.data, args.split)
    if not utts:
        raise UsageError(f"split {args.split!r} is empty")
    metrics = evaluate(model, utts, model.config.optim.eval_batch_size)
    sys.stdout.write(
        "{" + ", ".join(f'"{k}": {v:.2f}' for k, v in metrics.rounded(2).items()) + "}\n"
    )
    return 0


def _parse_seeds(text: str) -> list[int]:
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(v) for v in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be a comma list or a range like 0-4, got {text!r}") from None


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    cfg = _resolved(cfg, data=args.data, teacher=args.teacher)
    if cfg.paths.data is None or cfg.paths.teacher is None:
        raise UsageError("ablate needs --data and --teacher")
    seeds = _parse_seeds(args.seeds)
    if len(seeds) < 3:
        raise UsageError("ablate needs at least 3 seeds")
    arms = args.arms.split(",") if args.arms else list(ABLATION_ARMS)
    unknown = [a for a in arms if a not in ABLATION_ARMS]
    if unknown:
        raise UsageError(f"unknown arms {unknown}; choose from {list(ABLATION_ARMS)}")
    train_utts = _read_split(cfg.paths.data, "train")
    dev_utts = _read_split(cfg.paths.data, "dev", required=False)
    test_utts = _read_split(cfg.paths.data, "test", required=False)
    maps = build_label_maps(train_utts)
    teacher = make_teacher(cfg.paths.teacher, maps, cfg.d_et)
    report = ablate(train_utts, dev_utts, test_utts, maps, teacher, _without_paths(cfg), seeds, arms)
    report["config"] = cfg.to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_grad_check(args) -> int:
    seeds = range(args.seed, args.seed + args.n_seeds)
    results = run_suite(seeds)
    width = max(len(r.name) for r in results)
    print(f"{'case':<{width}}  seed  max_rel_err  status")
    for r in results:
        print(f"{r.name:<{width}}  {r.seed:>4}  {r.error:11.3e}  {'pass' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed (tolerance {TOLERANCE:g})")
    return 1 if failed else 0


def cmd_schedule(args) -> int:
    cfg = _load_config(args.config).distill
    halved = dataclasses.replace(cfg, schedule_variant="halved")
    literal = dataclasses.replace(cfg, schedule_variant="literal")
    d = args.decimals
    print("epoch\thalved\tliteral")
    for e in range(cfg.epochs + 1):
        print(f"{e}\t{ddc_lambda(e, halved):.{d}f}\t{ddc_lambda(e, literal):.{d}f}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="afd-slu", description="Adaptive feature distillation for joint intent detection and slot filling.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="write a synthetic corpus and its teacher embeddings")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--n-train", dest="n_train", type=int)
    g.add_argument("--n-dev", dest="n_dev", type=int)
    g.add_argument("--n-test", dest="n_test", type=int)
    g.add_argument("--d-et", dest="d_et", type=int)
    g.add_argument("--vocab", type=int)
    g.add_argument("--n-intents", dest="n_intents", type=int)
    g.add_argument("--n-slot-types", dest="n_slot_types", type=int)
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    g.add_argument("--keyword-noise", dest="keyword_noise", type=float)
    g.add_argument("--value-noise", dest="value_noise", type=float)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train student and adapter")
    t.add_argument("--config")
    t.add_argument("--data", help="directory holding train.jsonl and dev.jsonl")
    t.add_argument("--teacher", help="file:PATH or synth:SEED")
    t.add_argument("--log", help="epoch log path (default OUT/train_log.jsonl)")
    t.add_argument("--out", help="run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on one split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="corpus directory or a .jsonl file")
    e.add_argument("--split", default="test", choices=SPLITS)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train every ablation arm over several seeds")
    a.add_argument("--config")
    a.add_argument("--data")
    a.add_argument("--teacher", help="file:PATH or synth:SEED")
    a.add_argument("--seeds", default="0,1,2,3,4", help="comma list or range, e.g. 0-4")
    a.add_argument("--arms", help=f"subset of {','.join(ABLATION_ARMS)}")
    a.add_argument("--report", help="also write the report here")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("grad-check", help="finite-difference check of every gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--n-seeds", dest="n_seeds", type=int, default=1)
    c.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("schedule", help="print the distillation weight per epoch")
    s.add_argument("--config")
    s.add_argument("--decimals", type=int, default=4)
    s.set_defaults(func=cmd_schedule)
    return p


_ERRORS = (
    ConfigError,
    SynthConfigError,
    CorpusError,
    LabelError,
    DimensionError,
    CheckpointError,
    TeacherLookupError,
    NonFiniteLossError,
    FileNotFoundError,
    ValueError,
)


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": " ".join(str(message).split())}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except _ERRORS as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    except (OSError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
