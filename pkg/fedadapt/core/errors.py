"""Exception types raised across fedadapt."""
from typing import Sequence


class FedAdaptError(Exception):
    """Base class for all fedadapt errors."""


class ShapeError(FedAdaptError, ValueError):
    """Raised when operand shapes are incompatible for a primitive."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = tuple(tuple(int(s) for s in shape) for shape in shapes)
        shapes_str = " vs ".join(str(list(s)) for s in self.shapes)
        message = f"{op}: incompatible shapes {shapes_str}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class FreezePolicyError(FedAdaptError, ValueError):
    pass


class GradientKeyError(FedAdaptError, KeyError):
    """Gradient map does not cover exactly the trainable leaves."""

    def __init__(self, missing=(), extra=(), frozen=()):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        self.frozen = sorted(frozen)
        parts = []
        if self.missing:
            parts.append(f"missing={self.missing}")
        if self.extra:
            parts.append(f"extra={self.extra}")
        if self.frozen:
            parts.append(f"frozen={self.frozen}")
        super().__init__("gradient paths do not match trainable leaves: " + ", ".join(parts))

    def __str__(self):
        return self.args[0]


class CheckpointError(FedAdaptError, ValueError):
    pass


class DatasetError(FedAdaptError, ValueError):
    pass


class ConfigError(FedAdaptError, ValueError):
    pass


class BudgetMismatchError(FedAdaptError, ValueError):
    pass
