import dataclasses

import pytest
import torch

from fedadapt.core.config import ModelConfig
from fedadapt.data.datasets import DomainSpec, generate_domain
from fedadapt.models import AdapterSpec, SpeechModel

VARIANTS = ["separate", "seq_end", "seq_both", "parallel_end", "parallel_both"]


@pytest.fixture
def tiny_cfg():
    return ModelConfig(d_in=4, d=8, layers=2, ffm_mult=2, kernel=3, vocab_size=5)


@pytest.fixture
def tiny_domain():
    return DomainSpec(vocab_size=5, d_in=4, t_min=4, t_max=8, noise_scale=0.2)


@pytest.fixture
def source_set(tiny_domain):
    return generate_domain(tiny_domain, 24, seed=1)


@pytest.fixture
def target_set(tiny_domain):
    shifted = dataclasses.replace(
        tiny_domain, rotation_strength=0.8, bias_scale=0.5, prior_shift=1.0, domain_id="target"
    )
    return generate_domain(shifted, 24, seed=2)


@pytest.fixture
def tiny_model(tiny_cfg):
    return SpeechModel(tiny_cfg, None, seed=0)


def adapted_model(cfg, variant, bottleneck=2, seed=0, **kwargs):
    return SpeechModel(cfg, AdapterSpec(variant, bottleneck, **kwargs), seed=seed)


def randomize_adapters(model, seed=0):
    """Gives every adapter a non-zero up-projection so it actually changes the output."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for adapter in model.encoder.adapters():
            adapter.w_up.copy_(torch.randn(adapter.w_up.shape, generator=generator, dtype=adapter.w_up.dtype))
            adapter.b_up.copy_(torch.randn(adapter.b_up.shape, generator=generator, dtype=adapter.b_up.dtype))
