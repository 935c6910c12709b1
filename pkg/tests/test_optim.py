from fractions import Fraction

import numpy as np
import pytest

from src.errors import ShapeError
from src.models import OptimConfig
from src.optim import Adam, layer_lr


@pytest.mark.parametrize("alpha", [0.9, 0.75, 0.5, 1.0])
def test_layer_lr_matches_exact_power(alpha):
    base = 1e-4
    for depth in range(11):
        exact = Fraction(base) * Fraction(alpha) ** depth
        got = layer_lr(base, alpha, depth)
        assert abs(Fraction(got) - exact) / exact < Fraction(1, 10**15)


def test_alpha_one_collapses_to_base_lr():
    assert {layer_lr(3e-4, 1.0, d) for d in range(8)} == {3e-4}


@pytest.mark.parametrize("base,alpha,depth", [(0.0, 0.9, 0), (1e-4, 0.0, 1), (1e-4, 1.2, 1), (1e-4, 0.9, -1)])
def test_layer_lr_rejects_bad_arguments(base, alpha, depth):
    with pytest.raises(ValueError):
        layer_lr(base, alpha, depth)


def test_first_adam_step_moves_by_layer_rate():
    config = OptimConfig(base_lr=0.1, layer_decay=0.5, eps=1e-12)
    adam = Adam(config, {"head": 0, "deep": 2})
    params = {"head": np.array([1.0, -1.0]), "deep": np.array([[0.5]])}
    grads = {"head": np.array([3.0, -0.2]), "deep": np.array([[-7.0]])}
    updated = adam.step(params, grads, step_index=1)
    # bias-corrected first step is lr * sign(grad)
    np.testing.assert_allclose(updated["head"], [0.9, -0.9], rtol=1e-9)
    np.testing.assert_allclose(updated["deep"], [[0.525]], rtol=1e-9)
    np.testing.assert_array_equal(params["head"], [1.0, -1.0])


def test_frozen_parameters_are_untouched():
    adam = Adam(OptimConfig(base_lr=0.1), {"a": 0, "b": 1})
    params = {"a": np.ones(3), "b": np.ones(3)}
    grads = {"a": np.ones(3)}
    updated = adam.step(params, grads, step_index=1, frozen={"b"})
    assert updated["b"] is params["b"]
    assert "b" not in adam.m
    assert np.all(updated["a"] < 1.0)


def test_repeated_steps_follow_adam_recurrence():
    config = OptimConfig(base_lr=0.01, layer_decay=0.9)
    adam = Adam(config, {"w": 1})
    w = np.array([2.0])
    m = v = 0.0
    expected = 2.0
    for t, g in enumerate([0.5, -1.0, 0.25], start=1):
        w = adam.step({"w": w}, {"w": np.array([g])}, step_index=t)["w"]
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected -= 0.009 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert w[0] == pytest.approx(expected, rel=1e-12)


def test_gradient_errors():
    adam = Adam(OptimConfig(), {"a": 0})
    with pytest.raises(ShapeError):
        adam.step({"a": np.ones(2)}, {}, step_index=1)
    with pytest.raises(ShapeError):
        adam.step({"a": np.ones(2)}, {"a": np.ones(3)}, step_index=1)
    with pytest.raises(ValueError):
        adam.step({"a": np.ones(2)}, {"a": np.ones(2)}, step_index=0)
