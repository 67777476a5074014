import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_diff, gem_value, reg_value, rel_error, sce_value
from sparnet.exceptions import ShapeError
from sparnet.losses import (
    em_loss, gem_loss, gem_loss_dynamic, reg_loss, sce_loss, softmax_backward, total_objective,
)
from sparnet.numerics import PROB_FLOOR, softmax

batches = arrays(float, st.tuples(st.integers(1, 8), st.integers(2, 8)), elements=st.floats(-10, 10))


def test_em_examples():
    assert em_loss(np.eye(3)) == 0.0
    assert em_loss(np.full((2, 10), 0.1)) == pytest.approx(math.log(10))
    assert em_loss(np.zeros((0, 3))) == 0.0


def test_gem_examples():
    z = np.full((3, 5), 1.7)
    for tau in (1.0, 2.0, 3.5):
        value, grad = gem_loss(z, tau)
        assert value == pytest.approx(tau**2 * math.log(5))
        assert np.allclose(grad, 0)
    with pytest.raises(ValueError):
        gem_loss(z, 0.0)
    value, grad = gem_loss(np.zeros((0, 4)), 2.0)
    assert value == 0.0 and grad.shape == (0, 4)


@given(batches)
def test_gem_tau_one_is_em(z):
    assert abs(gem_loss(z, 1.0)[0] - em_loss(softmax(z))) < 1e-12


@given(batches, st.floats(1, 6))
def test_gem_matches_oracle(z, tau):
    assert gem_loss(z, tau)[0] == pytest.approx(gem_value(z.tolist(), tau), rel=1e-9, abs=1e-12)


def test_gem_gradient_fd(rng):
    for _ in range(30):
        z = rng.normal(0, 3, (int(rng.integers(1, 6)), int(rng.integers(2, 8))))
        tau = float(rng.uniform(1, 4))
        _, grad = gem_loss(z, tau)
        numeric = central_diff(lambda v: gem_loss(v.reshape(z.shape), tau)[0], z.ravel()).reshape(z.shape)
        assert rel_error(grad, numeric) < 1e-5


def test_gem_dynamic_gradient_fd(rng):
    for _ in range(30):
        z = rng.normal(0, 3, (int(rng.integers(1, 6)), int(rng.integers(2, 8))))
        s = float(rng.uniform(0.3, 2))
        value, grad, tau = gem_loss_dynamic(z, s)
        assert tau >= 1.0
        assert value == pytest.approx(gem_loss(z, tau)[0])
        numeric = central_diff(lambda v: gem_loss_dynamic(v.reshape(z.shape), s)[0], z.ravel()).reshape(z.shape)
        assert rel_error(grad, numeric) < 1e-5


def test_gem_dynamic_below_clamp_is_plain_em():
    z = np.array([[0.1, -0.1, 0.0], [0.2, 0.0, -0.3]])
    value, grad, tau = gem_loss_dynamic(z, 1.0)
    assert tau == 1.0
    ref_value, ref_grad = gem_loss(z, 1.0)
    assert value == ref_value and np.array_equal(grad, ref_grad)


def test_sce_examples():
    one_hot = np.eye(3)
    assert sce_loss(one_hot, one_hot)[0] == pytest.approx(0.0, abs=1e-12)
    assert sce_loss([[0.5, 0.5]], [[0.5, 0.5]])[0] == pytest.approx(math.log(2))
    expected = 0.5 * (math.log(2) + 0.5 * -math.log(PROB_FLOOR))
    assert sce_loss([[1.0, 0.0]], [[0.5, 0.5]])[0] == pytest.approx(expected)
    assert expected == pytest.approx(4.376, abs=1e-3)
    with pytest.raises(ShapeError):
        sce_loss(np.eye(2), np.eye(3))


def test_sce_symmetric_and_oracle(rng):
    for _ in range(100):
        p = softmax(rng.normal(0, 3, (4, 5)))
        q = softmax(rng.normal(0, 3, (4, 5)))
        assert sce_loss(p, q)[0] == pytest.approx(sce_loss(q, p)[0], rel=1e-12)
        assert sce_loss(p, q)[0] == pytest.approx(sce_value(p.tolist(), q.tolist()), rel=1e-10)


def test_sce_gradient_fd(rng):
    for _ in range(30):
        shape = (int(rng.integers(1, 6)), int(rng.integers(2, 7)))
        pseudo = softmax(rng.normal(0, 2, shape))
        logits = rng.normal(0, 2, shape)

        def f(v):
            return sce_loss(pseudo, softmax(v.reshape(shape)))[0]

        probs = softmax(logits)
        _, dprobs = sce_loss(pseudo, probs)
        analytic = softmax_backward(probs, dprobs)
        assert rel_error(analytic, central_diff(f, logits.ravel()).reshape(shape)) < 1e-5


def test_reg_examples():
    value, grad = reg_loss([0.1, -0.2], [0.0, 0.0], [1.0, 2.0])
    assert value == pytest.approx(0.09)
    np.testing.assert_allclose(grad, [0.2, -0.8])
    assert reg_loss([1.0, 2.0], [1.0, 2.0], [3.0, 4.0])[0] == 0.0
    assert reg_loss([5.0, 2.0], [1.0, 2.0], [0.0, 0.0])[0] == 0.0
    with pytest.raises(ShapeError):
        reg_loss([1.0], [1.0, 2.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        reg_loss([1.0], [0.0], [-1.0])


def test_reg_oracle_fd_and_monotone(rng):
    for _ in range(20):
        n = int(rng.integers(1, 30))
        theta, theta0, omega = rng.standard_normal(n), rng.standard_normal(n), rng.uniform(0, 3, n)
        value, grad = reg_loss(theta, theta0, omega)
        assert value == pytest.approx(reg_value(theta, theta0, omega), rel=1e-12)
        assert rel_error(grad, central_diff(lambda v: reg_loss(v, theta0, omega)[0], theta)) < 1e-6
        further = theta + 0.1 * np.sign(theta - theta0)
        assert reg_loss(further, theta0, omega)[0] > value


def test_total_objective_examples():
    b = total_objective(2.0, 1.0, 0.5, 1.8, 1.0, counts=(3, 4))
    assert b.total == pytest.approx(5.1)
    assert total_objective(2.0, 1.0, 0.5, 0.0, 0.0).total == 1.0
    both_empty = total_objective(2.0, 1.0, 0.5, 1.8, 2.0, counts=(0, 0))
    assert both_empty.total == 1.0 and both_empty.gem == 0.0 and both_empty.sce == 0.0
    assert both_empty.counts == (0, 0)
    with pytest.raises(ValueError):
        total_objective(1.0, 1.0, 1.0, -1.0, 1.0)
