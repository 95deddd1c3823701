from typing import Optional

import torch
import torch.nn as nn

from fedadapt.core import tensor as T
from fedadapt.models.layers.Normalization import LayerNorm, uniform_weight, zeros


class FeedForwardModule(nn.Module):
    """Conformer macaron feed-forward module with a half-step residual.

    out = x + 0.5 * (swish(LN(x) w1 + b1) w2 + b2)
    """

    def __init__(
        self,
        d: int,
        mult: int = 4,
        eps: float = 1e-5,
        generator: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        hidden = d * mult
        self.norm = LayerNorm(d, eps, dtype)
        self.w1 = uniform_weight((d, hidden), d, generator, dtype)
        self.b1 = zeros(hidden, dtype)
        self.w2 = uniform_weight((hidden, d), hidden, generator, dtype)
        self.b2 = zeros(d, dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = T.elementwise("swish", T.linear(self.norm(x), self.w1, self.b1))
        h = T.linear(h, self.w2, self.b2)
        return T.elementwise("add", x, T.elementwise("scale", h, 0.5))
