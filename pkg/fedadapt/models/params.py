"""ParameterTree: the path-keyed view of a model used for freezing, exchange and accounting."""
import copy
import hashlib
from collections import OrderedDict
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional

import numpy as np
import torch
import torch.nn as nn

from fedadapt.core.errors import FreezePolicyError, ShapeError
from fedadapt.models.adapters import is_adapter_path


class FreezePolicy(str, Enum):
    ALL_TRAINABLE = "all_trainable"
    FREEZE_ENCODER_BASE = "freeze_encoder_base"
    FREEZE_ALL_BUT_ADAPTERS = "freeze_all_but_adapters"


def to_path(name: str) -> str:
    return name.replace(".", "/")


class ParameterTree:
    """Slash-keyed leaves of an ``nn.Module`` in lexicographic order.

    A leaf is frozen exactly when its tensor has ``requires_grad`` False; the tree
    holds no state of its own besides the module it wraps.
    """

    def __init__(self, module: nn.Module):
        self.module = module

    def leaves(self) -> "OrderedDict[str, nn.Parameter]":
        named = {to_path(name): p for name, p in self.module.named_parameters()}
        return OrderedDict((path, named[path]) for path in sorted(named))

    def __getitem__(self, path: str) -> nn.Parameter:
        try:
            return self.module.get_parameter(path.replace("/", "."))
        except AttributeError:
            raise KeyError(path) from None

    def __contains__(self, path: str) -> bool:
        try:
            self[path]
        except KeyError:
            return False
        return True

    def __iter__(self) -> Iterator[str]:
        return iter(self.leaves())

    def __len__(self) -> int:
        return len(self.leaves())

    def paths(self) -> List[str]:
        return list(self.leaves())

    def is_frozen(self, path: str) -> bool:
        return not self[path].requires_grad

    def trainable(self) -> "OrderedDict[str, nn.Parameter]":
        return OrderedDict((k, p) for k, p in self.leaves().items() if p.requires_grad)

    def trainable_paths(self) -> List[str]:
        return list(self.trainable())

    def frozen_paths(self) -> List[str]:
        return [k for k, p in self.leaves().items() if not p.requires_grad]

    def adapter_paths(self) -> List[str]:
        return [k for k in self.leaves() if is_adapter_path(k)]

    def total_count(self) -> int:
        return sum(p.numel() for p in self.leaves().values())

    def trainable_count(self) -> int:
        return sum(p.numel() for p in self.trainable().values())

    def frozen_count(self) -> int:
        return self.total_count() - self.trainable_count()

    def values(self, trainable_only: bool = False) -> Dict[str, torch.Tensor]:
        """Detached copies of leaf values, keyed by path."""
        source = self.trainable() if trainable_only else self.leaves()
        return OrderedDict((k, p.detach().clone()) for k, p in source.items())

    @torch.no_grad()
    def load_values(self, values: Mapping[str, torch.Tensor], strict: bool = True) -> None:
        leaves = self.leaves()
        if strict and set(values) != set(leaves):
            missing = sorted(set(leaves) - set(values))
            extra = sorted(set(values) - set(leaves))
            raise KeyError(f"value paths do not match tree: missing={missing}, extra={extra}")
        for path, value in values.items():
            if path not in leaves:
                continue
            leaf = leaves[path]
            if tuple(leaf.shape) != tuple(value.shape):
                raise ShapeError("load_values", leaf.shape, value.shape, detail=path)
            leaf.copy_(value)

    def grads(self) -> Dict[str, torch.Tensor]:
        """Gradients of the trainable leaves, zeros where none accumulated."""
        return OrderedDict(
            (k, p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for k, p in self.trainable().items()
        )

    def zero_grad(self) -> None:
        for p in self.leaves().values():
            p.grad = None

    def digest(self, trainable_only: bool = False) -> str:
        """SHA-256 over paths, shapes and little-endian float64 values."""
        h = hashlib.sha256()
        source = self.trainable() if trainable_only else self.leaves()
        for path, p in source.items():
            h.update(path.encode("utf-8"))
            h.update(np.asarray(p.shape, dtype="<i8").tobytes())
            h.update(p.detach().cpu().numpy().astype("<f8").tobytes())
        return h.hexdigest()

    def client_copy(self) -> "ParameterTree":
        """Deep copy of the module that shares frozen leaves read-only."""
        memo = {id(p): p for p in self.leaves().values() if not p.requires_grad}
        return ParameterTree(copy.deepcopy(self.module, memo))


def set_freeze(tree: ParameterTree, policy) -> None:
    policy = FreezePolicy(policy)
    leaves = tree.leaves()
    adapter_paths = set(tree.adapter_paths())
    if policy == FreezePolicy.FREEZE_ALL_BUT_ADAPTERS and not adapter_paths:
        raise FreezePolicyError("freeze_all_but_adapters needs a tree with adapter leaves")
    for path, p in leaves.items():
        if policy == FreezePolicy.ALL_TRAINABLE:
            trainable = True
        elif policy == FreezePolicy.FREEZE_ENCODER_BASE:
            trainable = path in adapter_paths or not path.startswith("encoder/")
        else:
            trainable = path in adapter_paths
        p.requires_grad_(trainable)
        if not trainable:
            p.grad = None


def delta(after: Mapping[str, torch.Tensor], before: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    return OrderedDict((k, after[k] - before[k]) for k in sorted(before))


def l2_norm(values: Mapping[str, torch.Tensor], paths: Optional[List[str]] = None) -> float:
    """L2 norm over several leaves, summed in canonical path order."""
    total = 0.0
    for k in paths or sorted(values):
        total += float(torch.sum(values[k].double() ** 2))
    return total ** 0.5
