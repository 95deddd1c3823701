"""Structured config schema.

The dataclasses below are registered with Hydra's ``ConfigStore`` as
``base_config`` so every composed YAML is checked against them. Struct mode
rejects unknown keys; :func:`validate_config` rejects out-of-range values.
"""
from dataclasses import dataclass, field
from typing import List, Optional

from hydra.core.config_store import ConfigStore
from omegaconf import MISSING, DictConfig, OmegaConf

from fedadapt.core.errors import ConfigError

STAGES = (
    "make_fixtures",
    "pretrain_encoder",
    "pretrain_decoder",
    "fedtune",
    "centralized_tune",
    "ablation",
    "eval",
    "params_report",
    "family",
)


@dataclass
class ModelConfig:
    d_in: int = 16
    d: int = 32
    layers: int = 4
    ffm_mult: int = 4
    kernel: int = 5
    use_attention: bool = True
    use_conv: bool = True
    vocab_size: int = 12
    ln_eps: float = 1e-5
    # Full-scale accounting constants; None means count real leaves
    encoder_base_params: Optional[int] = None
    decoder_params: Optional[int] = None


@dataclass
class AdapterConfig:
    # "none" or one of the AdapterVariant values
    variant: str = "none"
    bottleneck: int = 8
    nonlinearity: str = "relu"
    internal_residual: bool = True


@dataclass
class DomainConfig:
    domain_id: str = "source"
    n_examples: int = 640
    seed: int = 0
    noise_scale: float = 0.3
    rotation_strength: float = 0.0
    bias_scale: float = 0.0
    prior_shift: float = 0.0


@dataclass
class DataConfig:
    vocab_size: int = 12
    d_in: int = 16
    t_min: int = 8
    t_max: int = 32
    means_seed: int = 1234
    transform_seed: int = 4321
    fixture_dir: str = "fixtures"
    ssl: DomainConfig = field(default_factory=lambda: DomainConfig(domain_id="ssl", n_examples=512, seed=11))
    source: DomainConfig = field(default_factory=lambda: DomainConfig(domain_id="source", seed=21))
    source_eval: DomainConfig = field(
        default_factory=lambda: DomainConfig(domain_id="source", n_examples=128, seed=22)
    )
    target: DomainConfig = field(
        default_factory=lambda: DomainConfig(
            domain_id="target", seed=31, rotation_strength=0.8, bias_scale=0.5, prior_shift=1.0
        )
    )
    target_eval: DomainConfig = field(
        default_factory=lambda: DomainConfig(
            domain_id="target",
            n_examples=128,
            seed=32,
            rotation_strength=0.8,
            bias_scale=0.5,
            prior_shift=1.0,
        )
    )


@dataclass
class FedSection:
    num_clients: int = 64
    client_batch: int = 10
    rounds: int = 1000
    local_iterations_per_round: int = 1
    client_lr: float = 1e-4
    server_lr: float = 2e-4
    server_optimizer: str = "adam"
    plain_average: bool = False
    clients_per_round: Optional[int] = None
    max_workers: int = 1
    eval_every: int = 100


@dataclass
class StageConfig:
    name: str = MISSING
    # stage 1
    ssl_steps: int = 500
    ssl_lr: float = 1e-3
    ssl_batch: int = 16
    mask_prob: float = 0.15
    span_len: int = 3
    codebook_size: int = 16
    codebook_dim: int = 8
    # stage 2
    strategy: str = "without_adapters"
    decoder_steps: int = 800
    decoder_lr: float = 3e-3
    decoder_batch: int = 32
    # centralized arm
    central_iterations: int = 5000
    central_batch: int = 128
    central_lr: float = 2e-4
    central_optimizer: str = "adam"
    # ablation: variants whose federated and centralized target WERs differ by less
    # than max_gap; at least min_within_gap of them for the check to pass
    max_gap: float = 0.05
    min_within_gap: int = 4
    # checkpoint inputs
    encoder_checkpoint: Optional[str] = None
    pretrained_checkpoint: Optional[str] = None
    # fedtune: continue from an earlier tuned checkpoint instead of starting over
    resume_checkpoint: Optional[str] = None
    variants: List[str] = field(
        default_factory=lambda: ["separate", "seq_end", "seq_both", "parallel_end", "parallel_both"]
    )


@dataclass
class TrainerConfig:
    # keyword arguments of pytorch_lightning.Trainer for the Lightning stages
    _target_: str = "pytorch_lightning.Trainer"
    accelerator: str = "cpu"
    devices: int = 1
    deterministic: bool = True
    log_every_n_steps: int = 10
    check_val_every_n_epoch: int = 10
    enable_checkpointing: bool = False
    enable_progress_bar: bool = False
    enable_model_summary: bool = False
    num_sanity_val_steps: int = 0


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    data: DataConfig = field(default_factory=DataConfig)
    fed: FedSection = field(default_factory=FedSection)
    stage: StageConfig = field(default_factory=StageConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    seed: int = MISSING
    precision: int = 64
    out_dir: str = "outputs"
    print_config: bool = True
    ignore_warnings: bool = True
    debug: bool = False
    work_dir: str = "."


def register_configs() -> None:
    cs = ConfigStore.instance()
    cs.store(name="base_config", node=ExperimentConfig)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate_config(config: DictConfig) -> None:
    """Checks value ranges the schema types cannot express."""
    _require(config.stage.name in STAGES, f"stage must be one of {STAGES}, got {config.stage.name}")
    _require(config.precision in (32, 64), f"precision must be 32 or 64, got {config.precision}")
    m = config.model
    _require(m.d >= 2, f"model.d must be >= 2, got {m.d}")
    _require(m.layers >= 1, f"model.layers must be >= 1, got {m.layers}")
    _require(m.kernel >= 1, f"model.kernel must be >= 1, got {m.kernel}")
    _require(m.vocab_size >= 2, f"model.vocab_size must be >= 2, got {m.vocab_size}")
    _require(
        m.vocab_size == config.data.vocab_size and m.d_in == config.data.d_in,
        "model.vocab_size/d_in must match data.vocab_size/d_in",
    )
    a = config.adapter
    if a.variant != "none":
        _require(0 < a.bottleneck < m.d, f"adapter.bottleneck must be in [1, {m.d}), got {a.bottleneck}")
    f = config.fed
    for key in ("num_clients", "client_batch", "local_iterations_per_round", "max_workers", "eval_every"):
        _require(f[key] >= 1, f"fed.{key} must be positive, got {f[key]}")
    _require(f.rounds >= 0, f"fed.rounds must be >= 0, got {f.rounds}")
    _require(f.client_lr > 0 and f.server_lr > 0, "fed learning rates must be positive")
    _require(f.server_optimizer in ("adam", "sgd"), f"fed.server_optimizer must be adam or sgd, got {f.server_optimizer}")
    if f.clients_per_round is not None:
        _require(
            1 <= f.clients_per_round <= f.num_clients,
            f"fed.clients_per_round must be in [1, {f.num_clients}], got {f.clients_per_round}",
        )
    s = config.stage
    _require(0.0 < s.mask_prob <= 1.0, f"stage.mask_prob must be in (0, 1], got {s.mask_prob}")
    _require(s.span_len >= 1, f"stage.span_len must be >= 1, got {s.span_len}")
    _require(
        1 <= config.data.t_min <= config.data.t_max,
        f"data.t_min must be in [1, data.t_max], got {config.data.t_min}",
    )
    _require(
        config.data.t_min >= s.span_len,
        f"data.t_min ({config.data.t_min}) must be >= stage.span_len ({s.span_len}) so every utterance fits a span",
    )
    _require(
        s.strategy in ("without_adapters", "with_adapters"),
        f"stage.strategy must be without_adapters or with_adapters, got {s.strategy}",
    )
    _require(
        s.central_optimizer in ("adam", "sgd"),
        f"stage.central_optimizer must be adam or sgd, got {s.central_optimizer}",
    )
    for key in ("ssl_steps", "decoder_steps", "central_iterations"):
        _require(s[key] >= 0, f"stage.{key} must be >= 0, got {s[key]}")
    for key in ("ssl_batch", "decoder_batch", "central_batch"):
        _require(s[key] >= 1, f"stage.{key} must be positive, got {s[key]}")
    if s.name == "ablation":
        _require(s.max_gap > 0, f"stage.max_gap must be positive, got {s.max_gap}")
        _require(
            0 <= s.min_within_gap <= len(s.variants),
            f"stage.min_within_gap must be in [0, {len(s.variants)}], got {s.min_within_gap}",
        )


def to_container(config: DictConfig) -> dict:
    return OmegaConf.to_container(config, resolve=True)
