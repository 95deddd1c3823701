import math

import pytest
import torch
import torch.nn as nn

from fedadapt.core.errors import GradientKeyError
from fedadapt.federated.optimizers import AdamState, SgdState, adam_step, additive_step, sgd_step
from fedadapt.models.params import ParameterTree


class Scalars(nn.Module):
    def __init__(self, *values):
        super().__init__()
        for i, v in enumerate(values):
            setattr(self, f"p{i}", nn.Parameter(torch.tensor([float(v)], dtype=torch.float64)))


def scalar_adam_reference(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Hand-rolled scalar Adam recurrence."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        theta -= lr * (m / (1 - beta1 ** t)) / (math.sqrt(v / (1 - beta2 ** t)) + eps)
    return theta


def grads_of(value):
    return {"p0": torch.tensor([float(value)], dtype=torch.float64)}


def test_sgd_step_hand_example():
    tree = ParameterTree(Scalars(1.0))
    sgd_step(tree, grads_of(2.0), SgdState(0.1))
    assert math.isclose(float(tree["p0"]), 0.8, rel_tol=1e-15)
    sgd_step(tree, grads_of(0.0), SgdState(0.1))
    assert math.isclose(float(tree["p0"]), 0.8, rel_tol=1e-15)


def test_sgd_is_linear():
    a, b = ParameterTree(Scalars(0.3)), ParameterTree(Scalars(0.3))
    state = SgdState(0.05)
    sgd_step(a, grads_of(1.5 + -0.7), state)
    sgd_step(b, grads_of(1.5), state)
    sgd_step(b, grads_of(-0.7), state)
    assert abs(float(a["p0"]) - float(b["p0"])) < 1e-12


def test_sgd_rejects_bad_learning_rate():
    with pytest.raises(ValueError):
        SgdState(0.0)


def test_optimizers_refuse_frozen_and_missing_paths():
    tree = ParameterTree(Scalars(1.0, 2.0))
    tree["p1"].requires_grad_(False)
    before = tree["p1"].detach().clone()
    with pytest.raises(GradientKeyError) as err:
        sgd_step(tree, {"p0": torch.ones(1, dtype=torch.float64), "p1": torch.ones(1, dtype=torch.float64)}, SgdState(0.1))
    assert err.value.frozen == ["p1"]
    with pytest.raises(GradientKeyError) as err:
        adam_step(tree, {}, AdamState.for_tree(tree, 0.1))
    assert err.value.missing == ["p0"]
    with pytest.raises(KeyError):
        additive_step(tree, {"p0": torch.ones(1, dtype=torch.float64), "nope": torch.ones(1, dtype=torch.float64)})
    assert torch.equal(tree["p1"], before)


def test_adam_first_step_is_sign_step():
    tree = ParameterTree(Scalars(0.0))
    adam_step(tree, grads_of(1.0), AdamState.for_tree(tree, 0.001))
    assert abs(float(tree["p0"]) + 0.001) < 1e-6


def test_adam_zero_gradient_leaves_value():
    tree = ParameterTree(Scalars(0.4))
    state = AdamState.for_tree(tree, 0.001)
    adam_step(tree, grads_of(0.0), state)
    assert float(tree["p0"]) == 0.4
    assert state.t == 1


def test_adam_matches_scalar_recurrence():
    tree = ParameterTree(Scalars(0.5))
    state = AdamState.for_tree(tree, 0.01)
    for _ in range(2):
        adam_step(tree, grads_of(1.0), state)
    assert abs(float(tree["p0"]) - scalar_adam_reference(0.5, [1.0, 1.0], 0.01)) < 1e-12


def test_adam_is_scale_invariant_for_constant_gradients():
    small, large = ParameterTree(Scalars(1.0)), ParameterTree(Scalars(1.0))
    s_state, l_state = AdamState.for_tree(small, 0.01), AdamState.for_tree(large, 0.01)
    for _ in range(5):
        adam_step(small, grads_of(0.3), s_state)
        adam_step(large, grads_of(3.0), l_state)
    moved_small = 1.0 - float(small["p0"])
    moved_large = 1.0 - float(large["p0"])
    assert abs(moved_small - moved_large) / moved_large < 1e-6


def test_adam_state_covers_trainable_leaves_only():
    tree = ParameterTree(Scalars(1.0, 2.0, 3.0))
    tree["p2"].requires_grad_(False)
    state = AdamState.for_tree(tree, 0.1)
    assert list(state.m) == ["p0", "p1"]
    restored = AdamState.from_state_dict(state.state_dict())
    assert restored.t == state.t and list(restored.v) == ["p0", "p1"]


def test_additive_step():
    tree = ParameterTree(Scalars(1.0))
    additive_step(tree, grads_of(-0.25))
    assert float(tree["p0"]) == 0.75
