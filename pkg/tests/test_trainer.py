import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afd_slu.config import ConfigError, DistillConfig, RunConfig
from afd_slu.data import build_label_maps
from afd_slu.model import checkpoint_bytes, evaluate
from afd_slu.ops import mse_sum
from afd_slu.optim import Adam, clip_grad_norm
from afd_slu.synthetic import gen_synthetic
from afd_slu.teacher import FileTeacher, SyntheticFrozenTeacher
from afd_slu.tensor import Tensor
from afd_slu.trainer import (
    NonFiniteLossError,
    ablate,
    ddc_lambda,
    epoch_lambda,
    total_loss,
    train,
)

# ---------------------------------------------------------------- schedule


def test_schedule_endpoints_with_default_constants():
    for variant in ("halved", "literal"):
        cfg = DistillConfig(epochs=50, schedule_variant=variant)
        assert ddc_lambda(50, cfg) == pytest.approx(0.7, abs=1e-12)
    assert ddc_lambda(0, DistillConfig(epochs=50)) == pytest.approx(0.1, abs=1e-12)


def test_literal_schedule_as_printed():
    cfg = DistillConfig(epochs=10, schedule_variant="literal", clamp_nonnegative=False)
    assert ddc_lambda(0, cfg) == pytest.approx(2 * 0.1 - 0.7, abs=1e-12)
    assert ddc_lambda(5, cfg) == pytest.approx(0.1, abs=1e-12)
    clamped = DistillConfig(epochs=10, schedule_variant="literal")
    assert ddc_lambda(0, clamped) == 0.0


def test_schedule_matches_direct_formula():
    cfg = DistillConfig(lambda_initial=0.3, lambda_final=0.9, epochs=7)
    for e in range(8):
        want = 0.9 + (0.3 - 0.9) * (1 + math.cos(e * math.pi / 7)) / 2
        assert ddc_lambda(e, cfg) == pytest.approx(want, abs=1e-12)


def test_schedule_range_errors():
    cfg = DistillConfig(epochs=4)
    with pytest.raises(ValueError):
        ddc_lambda(5, cfg)
    with pytest.raises(ValueError):
        ddc_lambda(-1, cfg)


@given(st.integers(0, 2000), st.integers(0, 2000), st.integers(1, 60))
@settings(max_examples=60, deadline=None)
def test_halved_schedule_is_monotone(i, f, epochs):
    # a 1e-3 grid keeps distinct endpoints far enough apart to be resolved
    # over 60 steps, and makes equal endpoints common
    lam_i, lam_f = i / 1000, f / 1000
    cfg = DistillConfig(lambda_initial=lam_i, lambda_final=lam_f, epochs=epochs)
    values = [ddc_lambda(e, cfg) for e in range(epochs + 1)]
    steps = np.diff(values)
    if lam_f > lam_i:
        assert (steps > 0).all()
    elif lam_f < lam_i:
        assert (steps < 0).all()
    else:
        assert (steps == 0).all()
    assert values[-1] == lam_f


def test_ablation_switches_the_weight():
    assert epoch_lambda(0, DistillConfig(epochs=5, ablation="no_distill")) == 0.0
    assert [epoch_lambda(e, DistillConfig(epochs=5, ablation="no_ddc")) for e in range(5)] == [0.7] * 5
    cfg = DistillConfig(epochs=5)
    assert epoch_lambda(3, cfg) == ddc_lambda(3, cfg)


# ---------------------------------------------------------------- objective


def test_total_loss_examples():
    assert total_loss(1.5, 2.0, 0.1).item() == pytest.approx(1.7, abs=1e-15)
    assert total_loss(1.5, 2.0, 0.0).item() == 1.5
    assert total_loss(1.5, 0.0, 0.4).item() == 1.5


@given(st.floats(-5, 5), st.floats(0, 5))
@settings(max_examples=30, deadline=None)
def test_total_loss_is_linear_in_distill(task, lam):
    points = [0.0, 1.3, 4.1]
    values = [total_loss(task, d, lam).item() for d in points]
    for d, v in zip(points, values):
        assert v == pytest.approx(task + lam * d, abs=1e-12)
    slope = (values[2] - values[1]) / (points[2] - points[1])
    assert slope == pytest.approx(lam, abs=1e-9)


def test_total_loss_gradient_splits_by_lambda():
    from afd_slu.tensor import backward

    t, d = Tensor(np.array(2.0), requires_grad=True), Tensor(np.array(3.0), requires_grad=True)
    g = backward(total_loss(t, d, 0.25))
    assert g[t] == 1.0 and g[d] == 0.25


@pytest.mark.parametrize("seed", range(5))
def test_mse_sum_matches_scalar_recomputation(seed):
    rng = np.random.default_rng(seed)
    b, d = int(rng.integers(1, 6)), int(rng.integers(1, 9))
    x, y = rng.normal(size=(b, d)), rng.normal(size=(b, d))
    want = sum(sum((x[i, j] - y[i, j]) ** 2 for j in range(d)) for i in range(b)) / b
    assert mse_sum(Tensor(x), Tensor(y)).item() == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------- optimizer


def test_adam_with_zero_gradients_leaves_parameters():
    p = {"a": Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)}
    before = p["a"].data.copy()
    opt = Adam(p, lr=0.1)
    for _ in range(3):
        opt.step({"a": np.zeros((2, 3))})
    opt.step({})
    np.testing.assert_array_equal(p["a"].data, before)


def test_adam_matches_reference_steps():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    opt = Adam(p, lr=0.01)
    w, m, v = np.array([1.0, -2.0]), np.zeros(2), np.zeros(2)
    for t in range(1, 5):
        g = np.array([0.5 * t, -1.0])
        opt.step({"w": g.copy()})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"].data, w, rtol=0, atol=1e-15)
    # first Adam step moves each coordinate by lr against the sign of its gradient
    q = {"w": Tensor(np.zeros(3), requires_grad=True)}
    Adam(q, lr=0.01).step({"w": np.array([3.0, -0.2, 1e-3])})
    np.testing.assert_allclose(q["w"].data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_clip_grad_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[0.0, 4.0]])}
    assert clip_grad_norm(grads, 5.0) == 5.0
    assert grads["a"].tolist() == [3.0, 0.0]
    assert clip_grad_norm(grads, 1.0) == 5.0
    total = math.sqrt(float((grads["a"] ** 2).sum() + (grads["b"] ** 2).sum()))
    assert total == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(grads["b"], [[0.0, 0.8]], atol=1e-9)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        DistillConfig(epochs=0)
    with pytest.raises(ConfigError):
        DistillConfig(lambda_initial=-0.1)
    with pytest.raises(ConfigError):
        DistillConfig(schedule_variant="cosine")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"distill": {"epochz": 3}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"optim": {"lr": "fast"}})
    with pytest.raises(ConfigError):
        RunConfig().replace(**{"student.dropout": 1.0})
    cfg = RunConfig().replace(**{"distill.epochs": 3, "seed": 4})
    assert cfg.distill.epochs == 3 and cfg.seed == 4
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert RunConfig().student.dropout == 0.4
    assert (RunConfig().distill.lambda_initial, RunConfig().distill.lambda_final) == (0.1, 0.7)


# ---------------------------------------------------------------- training

SMALL = {"student.d_emb": 8, "student.d_lstm": 8, "student.d_attn": 8, "d_et": 6, "optim.batch_size": 4}


@pytest.fixture(scope="module")
def tiny():
    c = gen_synthetic(3, n_train=24, n_dev=8, n_test=8, d_et=6, vocab=60, n_intents=3, n_slot_types=3)
    maps = build_label_maps(c.train)
    return c, maps, FileTeacher(c.teacher, 6)


def small_cfg(**extra):
    return RunConfig().replace(**{**SMALL, "distill.epochs": 3, **extra})


def test_training_is_deterministic(tiny):
    c, maps, teacher = tiny
    a = train(c.train, c.dev, maps, teacher, small_cfg(), seed=5)
    b = train(c.train, c.dev, maps, teacher, small_cfg(), seed=5)
    assert a.log_lines() == b.log_lines()
    assert checkpoint_bytes(a.model) == checkpoint_bytes(b.model)
    other = train(c.train, c.dev, maps, teacher, small_cfg(), seed=6)
    assert other.log_lines() != a.log_lines()


def test_zero_lambda_matches_no_distillation_bitwise(tiny):
    c, maps, teacher = tiny
    zero = train(c.train, c.dev, maps, teacher, small_cfg(**{"distill.lambda_initial": 0.0, "distill.lambda_final": 0.0}), seed=1)
    base = train(c.train, c.dev, maps, teacher, small_cfg(**{"distill.ablation": "no_distill"}), seed=1)
    for rz, rb in zip(zero.log, base.log):
        assert rz["lambda"] == rb["lambda"] == 0.0
        assert rz["task_loss"] == rb["task_loss"]
        assert rz["dev"] == rb["dev"]
    for k in base.final.student:
        assert zero.final.student[k].data.tobytes() == base.final.student[k].data.tobytes()


def test_log_records_schedule_and_losses(tiny):
    c, maps, teacher = tiny
    res = train(c.train, c.dev, maps, teacher, small_cfg(), seed=0)
    assert [r["epoch"] for r in res.log] == [0, 1, 2]
    cfg = small_cfg().distill
    assert [r["lambda"] for r in res.log] == [ddc_lambda(e, cfg) for e in range(3)]
    for r in res.log:
        assert set(r) == {"epoch", "lambda", "task_loss", "distill_loss", "dev"}
        assert set(r["dev"]) == {"intent_acc", "slot_f1", "overall_acc"}
        json.dumps(r)
    scores = [r["dev"]["overall_acc"] for r in res.log]
    assert res.best_epoch == scores.index(max(scores))
    assert evaluate(res.model, c.dev).overall_acc == max(scores)


def test_teacher_stays_frozen(tiny):
    c, maps, _ = tiny
    teacher = SyntheticFrozenTeacher(9, maps.n_tokens, 6)
    before = teacher.checksum()
    train(c.train, c.dev, maps, teacher, small_cfg(), seed=0)
    assert teacher.checksum() == before


def test_no_rpnn_uses_a_linear_adapter(tiny):
    c, maps, teacher = tiny
    res = train(c.train, [], maps, teacher, small_cfg(**{"distill.ablation": "no_rpnn", "distill.epochs": 1}), seed=0)
    assert set(res.model.adapter) == {"w", "b"}
    assert res.best_epoch == 0


def test_non_finite_loss_names_the_batch(tiny):
    c, maps, _ = tiny
    table = {u.id: np.zeros(6) for u in c.train}
    table[c.train[0].id] = np.full(6, np.nan)
    teacher = FileTeacher(table, 6)
    cfg = small_cfg(**{"optim.batch_size": 1, "distill.epochs": 1})
    with pytest.raises(NonFiniteLossError, match="train-"):
        train(c.train, [], maps, teacher, cfg, seed=0)


def test_training_argument_errors(tiny):
    c, maps, teacher = tiny
    with pytest.raises(ConfigError):
        train(c.train, c.dev, maps, None, small_cfg(), seed=0)
    with pytest.raises(ConfigError):
        train(c.train, c.dev, maps, FileTeacher({}, 5), small_cfg(), seed=0)
    with pytest.raises(ValueError):
        train([], c.dev, maps, teacher, small_cfg(), seed=0)
    # no teacher is needed when nothing is distilled
    train(c.train[:4], [], maps, None, small_cfg(**{"distill.ablation": "no_distill", "distill.epochs": 1}), seed=0)


def test_ablate_report(tiny):
    c, maps, teacher = tiny
    cfg = small_cfg(**{"distill.epochs": 1})
    rep = ablate(c.train, c.dev, c.test, maps, teacher, cfg, [0, 1, 2])
    assert rep["split"] == "test" and rep["seeds"] == [0, 1, 2]
    assert list(rep["arms"]) == ["full", "no_rpnn", "no_ddc", "no_distill"]
    for arm, summary in rep["arms"].items():
        rows = rep["per_seed"][arm]
        assert [r["seed"] for r in rows] == [0, 1, 2]
        vals = [r["overall_acc"] for r in rows]
        assert summary["overall_acc"]["mean"] == pytest.approx(np.mean(vals))
        assert summary["overall_acc"]["std"] == pytest.approx(np.std(vals, ddof=1))
    with pytest.raises(ValueError):
        ablate(c.train, c.dev, c.test, maps, teacher, cfg, [0, 1])


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_task_loss_falls_over_fifteen_epochs(seed):
    c = gen_synthetic(0)
    maps = build_label_maps(c.train)
    cfg = RunConfig().replace(**{"distill.epochs": 15})
    res = train(c.train, c.dev, maps, FileTeacher(c.teacher, c.config.d_et), cfg, seed=seed)
    assert res.log[-1]["task_loss"] < res.log[0]["task_loss"]
