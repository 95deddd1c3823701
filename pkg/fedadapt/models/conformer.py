"""Conformer-lite encoder, frame-classifier decoder and the adapter placement engine."""
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from fedadapt.core import tensor as T
from fedadapt.core.config import ModelConfig
from fedadapt.core.errors import ShapeError
from fedadapt.models.adapters import Adapter, AdapterSpec, AdapterVariant
from fedadapt.models.layers import ConvolutionModule, FeedForwardModule, LayerNorm, SelfAttention
from fedadapt.models.layers.Normalization import uniform_weight, zeros

# Adapters draw from their own stream so the base weights never depend on the adapter configuration
ADAPTER_SEED_OFFSET = 7919

ADAPTER_SLOTS = {"ffm1": "adapter_start", "ffm2": "adapter_end"}
SEPARATE_SLOT = "adapter_separate"


class ConformerLiteLayer(nn.Module):
    def __init__(
        self,
        cfg: ModelConfig,
        generator: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        d, eps = cfg.d, cfg.ln_eps
        self.d = d
        self.ffm1 = FeedForwardModule(d, cfg.ffm_mult, eps, generator, dtype)
        self.attention = SelfAttention(d, eps, generator, dtype) if cfg.use_attention else None
        self.conv = ConvolutionModule(d, cfg.kernel, eps, generator, dtype) if cfg.use_conv else None
        self.ffm2 = FeedForwardModule(d, cfg.ffm_mult, eps, generator, dtype)
        self.final_norm = LayerNorm(d, eps, dtype)
        self.variant: Optional[AdapterVariant] = None

    def attach_adapters(
        self, spec: AdapterSpec, generator: Optional[torch.Generator] = None, dtype=torch.float64
    ) -> int:
        """Adds the adapter instances ``spec`` asks for; returns how many were added."""
        if self.variant is not None:
            raise ValueError(f"layer already carries {self.variant.value} adapters")
        self.variant = spec.variant
        names = [ADAPTER_SLOTS[slot] for slot in spec.variant.ffm_slots] or [SEPARATE_SLOT]
        for name in names:
            self.add_module(name, Adapter(self.d, spec, generator, dtype))
        return len(names)

    def adapters(self) -> List[Adapter]:
        return [m for m in self.children() if isinstance(m, Adapter)]

    def _adapt(self, slot: str, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        adapter = getattr(self, ADAPTER_SLOTS[slot], None)
        if adapter is None:
            return h
        if self.variant.is_parallel:
            # h_new = h + f_A(x), x being the FFM module input; the outer sum is the skip
            return T.elementwise("add", h, adapter.branch(x))
        return adapter(h)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        h = self._adapt("ffm1", x, self.ffm1(x))
        if self.attention is not None:
            h = self.attention(h, valid)
        if self.conv is not None:
            h = self.conv(h, valid)
        h = self._adapt("ffm2", h, self.ffm2(h))
        out = self.final_norm(h)
        separate = getattr(self, SEPARATE_SLOT, None)
        if separate is not None:
            out = separate(out)
        return out


class ConformerEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float64):
        super().__init__()
        if cfg.d < 2 or cfg.layers < 1:
            raise ValueError(f"encoder needs d >= 2 and layers >= 1, got d={cfg.d} layers={cfg.layers}")
        self.cfg = cfg
        self.seed = seed
        self.dtype = dtype
        generator = torch.Generator().manual_seed(seed)
        self.input_proj = uniform_weight((cfg.d_in, cfg.d), cfg.d_in, generator, dtype)
        self.input_bias = zeros(cfg.d, dtype)
        self.layer_names = [f"layer{i:02d}" for i in range(cfg.layers)]
        for name in self.layer_names:
            self.add_module(name, ConformerLiteLayer(cfg, generator, dtype))
        self.adapter_spec: Optional[AdapterSpec] = None

    def insert_adapters(self, spec: AdapterSpec, seed: Optional[int] = None) -> int:
        """Places adapters into every layer per ``spec.variant``."""
        spec.check_model_dim(self.cfg.d)
        if self.adapter_spec is not None:
            raise ValueError("encoder already carries adapters")
        seed = self.seed + ADAPTER_SEED_OFFSET if seed is None else seed
        generator = torch.Generator().manual_seed(seed)
        added = sum(layer.attach_adapters(spec, generator, self.dtype) for layer in self.conformer_layers())
        self.adapter_spec = spec
        return added

    def adapters(self) -> List[Adapter]:
        return [a for layer in self.conformer_layers() for a in layer.adapters()]

    def conformer_layers(self) -> List[ConformerLiteLayer]:
        return [getattr(self, name) for name in self.layer_names]

    def forward(self, features: torch.Tensor, lengths: Optional[Sequence[int]] = None) -> torch.Tensor:
        """Encodes [T, d_in] or padded [B, T, d_in] features to [.., T, d]."""
        single = features.dim() == 2
        x = features.unsqueeze(0) if single else features
        if x.dim() != 3 or x.shape[-1] != self.cfg.d_in or x.shape[1] < 1:
            raise ShapeError("encoder_forward", features.shape, self.input_proj.shape)
        valid = frame_mask(x.shape[0], x.shape[1], lengths)
        h = T.linear(x, self.input_proj, self.input_bias)
        for layer in self.conformer_layers():
            h = layer(h, valid)
        return h[0] if single else h


class DecoderHead(nn.Module):
    """Frame classifier over V tokens plus a blank (index V)."""

    def __init__(self, d: int, vocab_size: int, seed: int = 0, dtype: torch.dtype = torch.float64):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.blank = vocab_size
        self.w = uniform_weight((d, vocab_size + 1), d, generator, dtype)
        self.b = zeros(vocab_size + 1, dtype)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return T.linear(h, self.w, self.b)


class SpeechModel(nn.Module):
    """Encoder with an optional decoder head; the object a ParameterTree wraps."""

    DECODER_SEED_OFFSET = 104729

    def __init__(
        self,
        cfg: ModelConfig,
        spec: Optional[AdapterSpec] = None,
        seed: int = 0,
        with_decoder: bool = True,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        self.encoder = ConformerEncoder(cfg, seed, dtype)
        if spec is not None:
            self.encoder.insert_adapters(spec)
        self.decoder = (
            DecoderHead(cfg.d, cfg.vocab_size, seed + self.DECODER_SEED_OFFSET, dtype)
            if with_decoder
            else None
        )

    @property
    def adapter_spec(self) -> Optional[AdapterSpec]:
        return self.encoder.adapter_spec

    @property
    def dtype(self) -> torch.dtype:
        return self.encoder.dtype

    def forward(self, features: torch.Tensor, lengths: Optional[Sequence[int]] = None) -> torch.Tensor:
        if self.decoder is None:
            raise ValueError("model has no decoder head")
        return self.decoder(self.encoder(features, lengths))


def build_encoder(
    cfg: ModelConfig,
    spec: Optional[AdapterSpec] = None,
    seed: int = 0,
    dtype: torch.dtype = torch.float64,
) -> Tuple["ParameterTree", ConformerEncoder]:  # noqa: F821
    from fedadapt.models.params import ParameterTree

    model = SpeechModel(cfg, spec, seed, with_decoder=False, dtype=dtype)
    return ParameterTree(model), model.encoder


def frame_mask(batch: int, frames: int, lengths: Optional[Sequence[int]] = None) -> torch.Tensor:
    """Boolean [B, T] mask of real (non-padding) frames."""
    if lengths is None:
        return torch.ones(batch, frames, dtype=torch.bool)
    lengths = torch.as_tensor(lengths, dtype=torch.long)
    if lengths.shape != (batch,):
        raise ShapeError("frame_mask", (batch, frames), lengths.shape)
    return torch.arange(frames)[None, :] < lengths[:, None]


def decode_greedy(logits: torch.Tensor, blank: Optional[int] = None) -> List[int]:
    """Per-frame argmax, collapse adjacent repeats, drop blanks."""
    if logits.dim() != 2:
        raise ShapeError("decode_greedy", logits.shape, detail="expected [T, V+1]")
    blank = logits.shape[-1] - 1 if blank is None else blank
    best = torch.argmax(logits, dim=-1).tolist()
    tokens, previous = [], None
    for label in best:
        if label != previous and label != blank:
            tokens.append(label)
        previous = label
    return tokens
