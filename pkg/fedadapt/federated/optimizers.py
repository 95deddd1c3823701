"""Client SGD and server Adam acting on the trainable leaves of a ParameterTree.

Both optimizers take gradients keyed by path and refuse maps that do not cover
exactly the trainable leaves, so a frozen leaf can never be stepped.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Mapping

import torch

from fedadapt.core.errors import GradientKeyError
from fedadapt.models.params import ParameterTree


@dataclass
class SgdState:
    learning_rate: float

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=OrderedDict)
    v: Dict[str, torch.Tensor] = field(default_factory=OrderedDict)

    @classmethod
    def for_tree(cls, tree: ParameterTree, learning_rate: float, **kwargs) -> "AdamState":
        """Zero moments for exactly the trainable leaves of ``tree``."""
        state = cls(learning_rate=learning_rate, **kwargs)
        for path, p in tree.trainable().items():
            state.m[path] = torch.zeros_like(p, requires_grad=False)
            state.v[path] = torch.zeros_like(p, requires_grad=False)
        return state

    def state_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": OrderedDict((k, self.m[k].clone()) for k in sorted(self.m)),
            "v": OrderedDict((k, self.v[k].clone()) for k in sorted(self.v)),
        }

    @classmethod
    def from_state_dict(cls, state: Mapping, dtype: torch.dtype = torch.float64) -> "AdamState":
        return cls(
            learning_rate=state["learning_rate"],
            beta1=state["beta1"],
            beta2=state["beta2"],
            eps=state["eps"],
            t=state["t"],
            m=OrderedDict((k, v.to(dtype)) for k, v in sorted(state["m"].items())),
            v=OrderedDict((k, v.to(dtype)) for k, v in sorted(state["v"].items())),
        )


def check_grad_paths(tree: ParameterTree, grads: Mapping[str, torch.Tensor]) -> None:
    trainable = set(tree.trainable_paths())
    given = set(grads)
    if given == trainable:
        return
    leaves = set(tree.paths())
    extra = given - trainable
    raise GradientKeyError(
        missing=trainable - given,
        extra=extra - leaves,
        frozen=extra & leaves,
    )


@torch.no_grad()
def sgd_step(tree: ParameterTree, grads: Mapping[str, torch.Tensor], state: SgdState) -> None:
    """theta <- theta - lr * g on every trainable leaf."""
    check_grad_paths(tree, grads)
    for path, p in tree.trainable().items():
        p.sub_(grads[path] * state.learning_rate)


@torch.no_grad()
def adam_step(tree: ParameterTree, grads: Mapping[str, torch.Tensor], state: AdamState) -> None:
    """Bias-corrected Adam update; ``state`` is advanced in place."""
    check_grad_paths(tree, grads)
    if set(state.m) != set(grads):
        raise GradientKeyError(missing=set(grads) - set(state.m), extra=set(state.m) - set(grads))
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for path, p in tree.trainable().items():
        g = grads[path]
        m = state.m[path].mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v = state.v[path].mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        denom = (v / bias2).sqrt_().add_(state.eps)
        p.sub_(state.learning_rate * (m / bias1) / denom)


@torch.no_grad()
def additive_step(tree: ParameterTree, deltas: Mapping[str, torch.Tensor]) -> None:
    """theta <- theta + delta; the literal 'update with the average delta' server."""
    check_grad_paths(tree, deltas)
    for path, p in tree.trainable().items():
        p.add_(deltas[path])

