import math
from typing import Optional

import torch
import torch.nn as nn

from fedadapt.core import tensor as T
from fedadapt.models.layers.Normalization import LayerNorm, uniform_weight, zeros


class SelfAttention(nn.Module):
    """Single-head self-attention over frames with a pre-norm and residual."""

    def __init__(
        self,
        d: int,
        eps: float = 1e-5,
        generator: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.scale = 1.0 / math.sqrt(d)
        self.norm = LayerNorm(d, eps, dtype)
        self.wq = uniform_weight((d, d), d, generator, dtype)
        self.bq = zeros(d, dtype)
        self.wk = uniform_weight((d, d), d, generator, dtype)
        self.bk = zeros(d, dtype)
        self.wv = uniform_weight((d, d), d, generator, dtype)
        self.bv = zeros(d, dtype)
        self.wo = uniform_weight((d, d), d, generator, dtype)
        self.bo = zeros(d, dtype)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        h = self.norm(x)
        query = T.linear(h, self.wq, self.bq)
        key = T.linear(h, self.wk, self.bk)
        value = T.linear(h, self.wv, self.bv)
        scores = T.elementwise("scale", T.bmm(query, key.transpose(1, 2)), self.scale)  # B x T x T
        attn = T.masked_softmax(scores, valid)
        out = T.linear(T.bmm(attn, value), self.wo, self.bo)
        return T.elementwise("add", x, out)
