"""Closed-form parameter and communication accounting.

Desk-scale configs are counted from layer shapes. A full-scale config pins the
encoder base and decoder totals as constants (``encoder_base_params`` and
``decoder_params``) because their exact composition is not derivable from the
layer shapes alone; adapters are always counted from shapes.
"""
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

from fedadapt.core.config import ModelConfig
from fedadapt.models.adapters import AdapterSpec, AdapterVariant, is_adapter_path
from fedadapt.models.params import FreezePolicy, ParameterTree


@dataclass(frozen=True)
class AccountingReport:
    encoder_base_params: int
    decoder_params: int
    adapter_params: int
    trainable: int
    bytes_per_value: int = 8
    num_clients: int = 1

    @property
    def total(self) -> int:
        return self.encoder_base_params + self.decoder_params + self.adapter_params

    @property
    def updated_percent(self) -> float:
        return 100.0 * self.trainable / self.total

    @property
    def bytes_per_round(self) -> int:
        """Upload volume of one round; the download volume is the same."""
        return self.trainable * self.bytes_per_value * self.num_clients

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(total=self.total, updated_percent=self.updated_percent, bytes_per_round=self.bytes_per_round)
        return out


def feed_forward_count(d: int, mult: int) -> int:
    hidden = d * mult
    return 2 * d + d * hidden + hidden + hidden * d + d


def attention_count(d: int) -> int:
    return 2 * d + 4 * (d * d + d)


def convolution_count(d: int, kernel: int) -> int:
    return 2 * d + (d * 2 * d + 2 * d) + (d * kernel + d) + (d * d + d)


def layer_count(cfg: ModelConfig) -> int:
    count = 2 * feed_forward_count(cfg.d, cfg.ffm_mult) + 2 * cfg.d
    if cfg.use_attention:
        count += attention_count(cfg.d)
    if cfg.use_conv:
        count += convolution_count(cfg.d, cfg.kernel)
    return count


def encoder_base_count(cfg: ModelConfig) -> int:
    if cfg.encoder_base_params is not None:
        return int(cfg.encoder_base_params)
    return cfg.d_in * cfg.d + cfg.d + cfg.layers * layer_count(cfg)


def decoder_count(cfg: ModelConfig) -> int:
    if cfg.decoder_params is not None:
        return int(cfg.decoder_params)
    return (cfg.d + 1) * (cfg.vocab_size + 1)


def adapter_count(cfg: ModelConfig, spec: Optional[AdapterSpec]) -> int:
    if spec is None:
        return 0
    return spec.instance_count(cfg.layers) * spec.param_count(cfg.d)


def account(
    cfg: ModelConfig,
    spec: Optional[AdapterSpec] = None,
    decoder_params: Optional[int] = None,
    policy: Optional[FreezePolicy] = None,
    num_clients: int = 1,
    bytes_per_value: int = 8,
) -> AccountingReport:
    """Counts what a model holds and what a tuning stage under ``policy`` updates.

    The default policy trains only the adapters when there are any, else everything.
    """
    if policy is None:
        policy = FreezePolicy.FREEZE_ALL_BUT_ADAPTERS if spec is not None else FreezePolicy.ALL_TRAINABLE
    policy = FreezePolicy(policy)
    encoder = encoder_base_count(cfg)
    decoder = decoder_count(cfg) if decoder_params is None else int(decoder_params)
    adapters = adapter_count(cfg, spec)
    if policy == FreezePolicy.ALL_TRAINABLE:
        trainable = encoder + decoder + adapters
    elif policy == FreezePolicy.FREEZE_ENCODER_BASE:
        trainable = decoder + adapters
    else:
        trainable = adapters
    return AccountingReport(
        encoder_base_params=encoder,
        decoder_params=decoder,
        adapter_params=adapters,
        trainable=trainable,
        bytes_per_value=bytes_per_value,
        num_clients=num_clients,
    )


def account_tree(tree: ParameterTree, bytes_per_value: int = 8, num_clients: int = 1) -> AccountingReport:
    """Enumerates the leaves of a real model instead of using closed forms."""
    encoder = decoder = adapters = 0
    for path, p in tree.leaves().items():
        if is_adapter_path(path):
            adapters += p.numel()
        elif path.startswith("encoder/"):
            encoder += p.numel()
        else:
            decoder += p.numel()
    return AccountingReport(
        encoder_base_params=encoder,
        decoder_params=decoder,
        adapter_params=adapters,
        trainable=tree.trainable_count(),
        bytes_per_value=bytes_per_value,
        num_clients=num_clients,
    )


def params_table(
    cfg: ModelConfig,
    bottleneck: int,
    variants: Sequence[str] = tuple(v.value for v in AdapterVariant),
    nonlinearity: str = "relu",
) -> List[Dict]:
    """Rows of updated-parameter share per adapter variant, plus full fine-tuning."""
    full = account(cfg, None, policy=FreezePolicy.ALL_TRAINABLE)
    rows = [
        {
            "variant": "full_tuning",
            "adapter_params": 0,
            "updated_params": full.trainable,
            "total_params": full.total,
            "updated_percent": round(full.updated_percent, 2),
        }
    ]
    for variant in variants:
        spec = AdapterSpec(variant, bottleneck, nonlinearity)
        report = account(cfg, spec)
        rows.append(
            {
                "variant": spec.variant.value,
                "adapter_params": report.adapter_params,
                "updated_params": report.trainable,
                "total_params": report.total,
                "updated_percent": round(report.updated_percent, 2),
            }
        )
    return rows
