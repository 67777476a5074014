import numpy as np
import pytest

from conftest import random_params
from sparnet.exceptions import ShapeError
from sparnet.mean_teacher import TeacherState, aug_avg_prediction, strong_augment, strong_augment_sample, weak_augment
from sparnet.model import BATCH_STATS, predict_proba


def test_teacher_init_copies(rng):
    params = random_params(rng)
    teacher = TeacherState(params, 0.9, 4)
    params.theta[:] = 0
    assert np.any(teacher.params.theta != 0)
    with pytest.raises(ValueError):
        TeacherState(params, 1.5)
    with pytest.raises(ValueError):
        TeacherState(params, 0.5, 0)


def test_ema_examples(rng):
    params = random_params(rng)
    t = TeacherState(params.unflatten(np.ones(params.arch.n_params)), alpha=0.9)
    t.ema_update(np.zeros(params.arch.n_params))
    np.testing.assert_allclose(t.params.theta, 0.9)
    frozen = TeacherState(params, alpha=1.0)
    before = frozen.params.theta.copy()
    frozen.ema_update(rng.standard_normal(params.arch.n_params))
    assert np.array_equal(frozen.params.theta, before)
    copy = TeacherState(params, alpha=0.0)
    student = rng.standard_normal(params.arch.n_params)
    copy.ema_update(student)
    assert np.array_equal(copy.params.theta, student)
    with pytest.raises(ShapeError):
        copy.ema_update(np.zeros(3))


def test_ema_stays_between_and_blends_running_stats(rng):
    params = random_params(rng)
    teacher = TeacherState(params, alpha=0.7)
    student = random_params(rng)
    old = teacher.params.theta.copy()
    old_mean = teacher.params.running_mean[0].copy()
    teacher.ema_update(student)
    lo, hi = np.minimum(old, student.theta), np.maximum(old, student.theta)
    assert np.all((teacher.params.theta >= lo) & (teacher.params.theta <= hi))
    np.testing.assert_allclose(teacher.params.running_mean[0], 0.7 * old_mean + 0.3 * student.running_mean[0])


def test_weak_augment_identity_and_determinism(rng):
    x = rng.standard_normal((5, 8))
    assert np.array_equal(weak_augment(x, rng, 0.0, 0.0), x)
    a = weak_augment(x, np.random.default_rng(3))
    b = weak_augment(x, np.random.default_rng(3))
    assert np.array_equal(a, b) and not np.array_equal(a, x)


def test_weak_augment_mean_monte_carlo():
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 6)
    draws = weak_augment(np.tile(x, (10_000, 1)), rng, jitter=0.05, mask_rate=0.1)
    expected = 0.9 * x
    # per-coordinate sd of one draw: mask Bernoulli plus jitter
    sd = np.sqrt(0.9 * 0.1 * x**2 + 0.9 * 0.05**2)
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 3 * sd / 100 + 1e-12)


def test_strong_augment_properties():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((10_000, 8))
    out = strong_augment(x, rng, feature_scale=1.0)
    assert np.all(np.isfinite(out))
    assert np.array_equal(strong_augment(x[:20], rng, severity_scale=0.0), x[:20])
    v = rng.standard_normal(8)
    outs = {tuple(strong_augment_sample(v, np.random.default_rng(s))) for s in range(100)}
    assert len(outs) > 90


def test_aug_avg_identity_and_simplex(rng):
    params = random_params(rng)
    teacher = TeacherState(params, n_aug=1)
    x = rng.standard_normal((6, 5))
    avg = aug_avg_prediction(teacher, x, rng, augment=lambda xs, r: xs)
    np.testing.assert_allclose(avg, predict_proba(params, x, BATCH_STATS))
    teacher.n_aug = 5
    avg = aug_avg_prediction(teacher, x, rng, feature_scale=0.5)
    np.testing.assert_allclose(avg.sum(axis=1), 1.0)
    assert np.all(avg >= 0)
    before = [m.copy() for m in teacher.params.running_mean]
    assert all(np.array_equal(a, b) for a, b in zip(before, teacher.params.running_mean))


def test_aug_avg_is_arithmetic_mean(rng):
    params = random_params(rng)
    teacher = TeacherState(params, n_aug=2)
    x = rng.standard_normal((4, 5))
    views = [x, 2 * x]
    calls = iter(views)
    avg = aug_avg_prediction(teacher, x, rng, augment=lambda xs, r: next(calls))
    expected = 0.5 * sum(predict_proba(params, v, BATCH_STATS) for v in views)
    np.testing.assert_allclose(avg, expected)
