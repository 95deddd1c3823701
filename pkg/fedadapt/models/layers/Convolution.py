from typing import Optional

import torch
import torch.nn as nn

from fedadapt.core import tensor as T
from fedadapt.models.layers.Normalization import LayerNorm, uniform_weight, zeros


class ConvolutionModule(nn.Module):
    """Conformer convolution module.

    LN -> pointwise d->2d -> GLU -> depthwise conv (kernel k) -> swish -> pointwise d->d,
    with a residual around the whole block. Padded frames are zeroed before the
    depthwise convolution so that they behave like the 'same' padding of a single
    utterance.
    """

    def __init__(
        self,
        d: int,
        kernel: int,
        eps: float = 1e-5,
        generator: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.norm = LayerNorm(d, eps, dtype)
        self.pw1 = uniform_weight((d, 2 * d), d, generator, dtype)
        self.pw1_b = zeros(2 * d, dtype)
        self.dw = uniform_weight((d, kernel), kernel, generator, dtype)
        self.dw_b = zeros(d, dtype)
        self.pw2 = uniform_weight((d, d), d, generator, dtype)
        self.pw2_b = zeros(d, dtype)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        h = T.linear(self.norm(x), self.pw1, self.pw1_b)
        value, gate = h.chunk(2, dim=-1)
        h = T.elementwise("mul", value, T.elementwise("sigmoid", gate))
        h = T.elementwise("mul", h, valid.unsqueeze(-1).expand_as(h).to(h.dtype))
        h = T.elementwise("swish", T.depthwise_conv1d(h, self.dw, self.dw_b))
        h = T.linear(h, self.pw2, self.pw2_b)
        return T.elementwise("add", x, h)
