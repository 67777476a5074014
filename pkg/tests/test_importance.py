import numpy as np
import pytest

from conftest import random_params
from oracles import central_diff, rel_error
from sparnet.exceptions import CheckpointFormatError, ConfigError
from sparnet.importance import ImportanceVector, compute_importance
from sparnet.model import RUNNING_STATS, Architecture, ModelParams, forward


def test_zero_network_zero_importance():
    params = ModelParams(Architecture(4, (5,), 3))
    omega = compute_importance(params, np.ones((3, 4)))
    assert not np.any(omega.values) and omega.sample_count == 3


def test_single_affine_hand_derivative():
    params = ModelParams(Architecture(2, (), 2))
    params["out.weight"][0] = [1.0, 0.0]
    omega = compute_importance(params, np.array([[1.0, 1.0]]))
    # logits (1, 0): only the first output row and bias receive gradient 2 * 1 * x
    expected = ModelParams(params.arch)
    expected["out.weight"][0] = [2.0, 2.0]
    expected["out.bias"][0] = 2.0
    np.testing.assert_allclose(omega.values, expected.theta)


def test_scales_quadratically_with_input_on_bias_free_linear_model(rng):
    params = ModelParams(Architecture(3, (), 2), rng.standard_normal(8))
    params["out.bias"][...] = 0.0
    x = rng.standard_normal((4, 3))
    base = params.unflatten(compute_importance(params, x).values)
    scaled = params.unflatten(compute_importance(params, 3.0 * x).values)
    # weight entries see output times input, biases the output alone
    np.testing.assert_allclose(scaled["out.weight"], 9.0 * base["out.weight"])
    np.testing.assert_allclose(scaled["out.bias"], 3.0 * base["out.bias"])


def test_matches_finite_differences(rng):
    params = random_params(rng, d=6, hidden=(5,), n_classes=3)
    x = rng.standard_normal((5, 6))
    per_sample = []
    for xq in x:
        f = lambda th: float((forward(params.unflatten(th), xq[None], RUNNING_STATS)[0] ** 2).sum())  # noqa: E731
        per_sample.append(np.abs(central_diff(f, params.theta)))
    assert rel_error(compute_importance(params, x).values, np.mean(per_sample, axis=0)) < 1e-4


def test_duplicate_and_order_invariance(rng):
    params = random_params(rng)
    x = rng.standard_normal((7, 5))
    a = compute_importance(params, x).values
    b = compute_importance(params, np.vstack([x, x])).values
    c = compute_importance(params, x[::-1]).values
    assert np.max(np.abs(a - b)) <= 1e-12 * np.abs(a).max()
    assert np.array_equal(a, c)


def test_errors_and_immutability(rng):
    params = random_params(rng)
    with pytest.raises(ValueError):
        compute_importance(params, np.zeros((0, 5)))
    omega = compute_importance(params, rng.standard_normal((2, 5)))
    with pytest.raises(ValueError):
        omega.values[0] = 1.0
    with pytest.raises(ValueError):
        ImportanceVector(np.array([-1.0]), 1, "x")


def test_checksum_binding_and_roundtrip(rng):
    params = random_params(rng)
    omega = compute_importance(params, rng.standard_normal((2, 5)))
    omega.check_against(params)
    other = params.copy()
    other.theta[0] += 1e-12
    with pytest.raises(ConfigError):
        omega.check_against(other)
    back = ImportanceVector.from_dict(omega.to_dict())
    assert np.array_equal(back.values, omega.values) and back.theta0_checksum == omega.theta0_checksum
    with pytest.raises(CheckpointFormatError):
        ImportanceVector.from_dict({"values": [1.0]})
