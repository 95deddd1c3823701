import math
from typing import Optional, Sequence

import torch
import torch.nn as nn

from fedadapt.core import tensor as T


def uniform_weight(
    shape: Sequence[int],
    fan_in: int,
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float64,
) -> nn.Parameter:
    """Weight drawn from uniform(+-1/sqrt(fan_in)) with an explicit generator."""
    bound = 1.0 / math.sqrt(fan_in)
    values = (torch.rand(tuple(shape), generator=generator, dtype=dtype) * 2.0 - 1.0) * bound
    return nn.Parameter(values)


def zeros(size: int, dtype: torch.dtype = torch.float64) -> nn.Parameter:
    return nn.Parameter(torch.zeros(size, dtype=dtype))


class LayerNorm(nn.Module):
    """Layer normalisation over the last axis with a learned gain and bias."""

    def __init__(self, d: int, eps: float = 1e-5, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(d, dtype=dtype))
        self.bias = zeros(d, dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return T.layernorm(x, self.gain, self.bias, self.eps)
