"""Masked-frame prediction targets from a frozen random-projection quantizer."""
from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from fedadapt.core.errors import ShapeError


class RandomProjectionQuantizer(nn.Module):
    """code(x) = argmin_c || l2norm(x P) - codebook[c] ||.

    The projection and the codebook are buffers, so they are never parameters of
    any model and never receive gradients.
    """

    def __init__(self, d_in: int, codebook_dim: int = 8, codebook_size: int = 16, seed: int = 0):
        super().__init__()
        if codebook_dim < 1 or codebook_size < 2:
            raise ValueError(f"need codebook_dim >= 1 and codebook_size >= 2, got {codebook_dim}, {codebook_size}")
        generator = torch.Generator().manual_seed(seed)
        # xavier-uniform
        bound = (6.0 / (d_in + codebook_dim)) ** 0.5
        projection = (torch.rand(d_in, codebook_dim, generator=generator, dtype=torch.float64) * 2 - 1) * bound
        codebook = torch.randn(codebook_size, codebook_dim, generator=generator, dtype=torch.float64)
        self.register_buffer("projection", projection)
        self.register_buffer("codebook", F.normalize(codebook, dim=-1))
        self.seed = seed

    @property
    def codebook_size(self) -> int:
        return self.codebook.shape[0]

    @torch.no_grad()
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.projection.shape[0]:
            raise ShapeError("quantize", x.shape, self.projection.shape)
        z = F.normalize(x.to(self.projection.dtype) @ self.projection, dim=-1)
        distances = torch.cdist(z.reshape(-1, z.shape[-1]), self.codebook)
        # argmin returns the first minimum, i.e. the lowest code on ties
        return torch.argmin(distances, dim=-1).reshape(x.shape[:-1])


@dataclass
class SslBatch:
    features: torch.Tensor  # [T, d_in], masked frames replaced by the mask vector
    mask: torch.Tensor  # [T] bool
    labels: torch.Tensor  # [n_masked] codes, in frame order

    def dense_labels(self) -> torch.Tensor:
        """[T] labels with 0 on unmasked frames; pair with ``mask`` for the loss."""
        dense = torch.zeros(self.mask.shape[0], dtype=torch.long)
        dense[self.mask] = self.labels
        return dense

    @property
    def mask_fraction(self) -> float:
        return float(self.mask.double().mean())


def span_mask(num_frames: int, mask_prob: float, span_len: int, generator: torch.Generator) -> torch.Tensor:
    """Bernoulli span starts extended by ``span_len``; redrawn until one frame is masked."""
    if not 0.0 < mask_prob <= 1.0:
        raise ValueError(f"mask_prob must be in (0, 1], got {mask_prob}")
    if span_len < 1:
        raise ValueError(f"span_len must be >= 1, got {span_len}")
    if num_frames < span_len:
        raise ShapeError("span_mask", (num_frames,), (span_len,), detail="sequence shorter than one span")
    while True:
        starts = torch.rand(num_frames, generator=generator, dtype=torch.float64) < mask_prob
        mask = torch.zeros(num_frames, dtype=torch.bool)
        for start in torch.nonzero(starts).flatten().tolist():
            mask[start : start + span_len] = True
        if bool(mask.any()):
            return mask


def make_ssl_batch(
    features: torch.Tensor,
    mask_prob: float,
    span_len: int,
    quantizer: RandomProjectionQuantizer,
    generator: torch.Generator,
    mask_vector: Optional[torch.Tensor] = None,
) -> SslBatch:
    """Masks spans of ``features`` [T, d_in] and labels them with quantizer codes.

    Labels come from the clean features. ``mask_vector`` is the learned constant
    substituted on masked frames (zeros when not given).
    """
    if features.dim() != 2:
        raise ShapeError("make_ssl_batch", features.shape, detail="expected [T, d_in]")
    mask = span_mask(features.shape[0], mask_prob, span_len, generator)
    labels = quantizer(features[mask])
    if mask_vector is None:
        mask_vector = torch.zeros(features.shape[-1], dtype=features.dtype)
    masked = torch.where(mask[:, None], mask_vector.to(features.dtype).expand_as(features), features)
    return SslBatch(features=masked, mask=mask, labels=labels)


def code_coverage(quantizer: RandomProjectionQuantizer, frames: Sequence[torch.Tensor]) -> float:
    """Fraction of the codebook hit by at least one frame."""
    codes: List[int] = []
    for x in frames:
        codes.extend(quantizer(x).flatten().tolist())
    return len(set(codes)) / quantizer.codebook_size
