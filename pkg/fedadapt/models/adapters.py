"""Bottleneck adapters and the five ways of attaching them to a conformer layer."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import torch
import torch.nn as nn

from fedadapt.core import tensor as T
from fedadapt.core.errors import ShapeError
from fedadapt.models.layers.Normalization import uniform_weight, zeros


class AdapterVariant(str, Enum):
    SEPARATE = "separate"
    SEQ_END = "seq_end"
    SEQ_BOTH = "seq_both"
    PARALLEL_END = "parallel_end"
    PARALLEL_BOTH = "parallel_both"

    @property
    def is_parallel(self) -> bool:
        return self in (AdapterVariant.PARALLEL_END, AdapterVariant.PARALLEL_BOTH)

    @property
    def instances_per_layer(self) -> int:
        return 2 if self in (AdapterVariant.SEQ_BOTH, AdapterVariant.PARALLEL_BOTH) else 1

    @property
    def ffm_slots(self) -> tuple:
        """Names of the feed-forward modules this variant attaches to."""
        if self == AdapterVariant.SEPARATE:
            return ()
        if self.instances_per_layer == 2:
            return ("ffm1", "ffm2")
        return ("ffm2",)


@dataclass(frozen=True)
class AdapterSpec:
    variant: AdapterVariant
    bottleneck: int
    nonlinearity: str = "relu"
    internal_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", AdapterVariant(self.variant))
        if self.bottleneck < 1:
            raise ValueError(f"adapter bottleneck must be >= 1, got {self.bottleneck}")
        if self.nonlinearity not in T.UNARY_KINDS:
            raise ValueError(
                f"{self.nonlinearity} is not a recognized nonlinearity, use one of {T.UNARY_KINDS}"
            )

    def check_model_dim(self, d: int) -> None:
        if self.bottleneck >= d:
            raise ValueError(f"adapter bottleneck {self.bottleneck} must be smaller than model dim {d}")

    def instance_count(self, layers: int) -> int:
        return layers * self.variant.instances_per_layer

    def param_count(self, d: int) -> int:
        """Parameters of one adapter instance: 2db + b + d."""
        return 2 * d * self.bottleneck + self.bottleneck + d

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "bottleneck": self.bottleneck,
            "nonlinearity": self.nonlinearity,
            "internal_residual": self.internal_residual,
        }

    @classmethod
    def from_dict(cls, values: Optional[dict]) -> Optional["AdapterSpec"]:
        if not values:
            return None
        return cls(**values)


class Adapter(nn.Module):
    """f_A(h) = sigma(h W_down + b_down) W_up + b_up, plus h in residual mode."""

    def __init__(
        self,
        d: int,
        spec: AdapterSpec,
        generator: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        spec.check_model_dim(d)
        b = spec.bottleneck
        self.d = d
        self.internal_residual = spec.internal_residual
        self.nonlinearity = spec.nonlinearity

        self.w_down = uniform_weight((d, b), d, generator, dtype)
        self.b_down = zeros(b, dtype)
        if spec.internal_residual:
            # zero up-projection makes the adapter an identity map at insertion
            self.w_up = nn.Parameter(torch.zeros(b, d, dtype=dtype))
        else:
            self.w_up = uniform_weight((b, d), d, generator, dtype)
        self.b_up = zeros(d, dtype)

    def branch(self, h: torch.Tensor) -> torch.Tensor:
        """The bottleneck path alone: sigma(h W_down + b_down) W_up + b_up."""
        if h.shape[-1] != self.d:
            raise ShapeError("adapter_forward", h.shape, self.w_down.shape)
        hidden = T.elementwise(self.nonlinearity, T.linear(h, self.w_down, self.b_down))
        return T.linear(hidden, self.w_up, self.b_up)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        out = self.branch(h)
        if self.internal_residual:
            out = T.elementwise("add", out, h)
        return out


def adapter_forward(adapter: Adapter, h: torch.Tensor) -> torch.Tensor:
    return adapter(h)


def is_adapter_path(path: str) -> bool:
    return any(part.startswith("adapter_") for part in path.split("/"))
