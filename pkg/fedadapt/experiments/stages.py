"""Stage operations of the three-stage pipeline, the ablation and the reports.

Every stage writes into ``<out_dir>/<stage>/`` and leaves a ``manifest.json``
naming the config hash and the digests of what it read and wrote.
"""
import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import hydra
import torch
from omegaconf import DictConfig
from pytorch_lightning import Trainer
from pytorch_lightning.loggers import CSVLogger

from fedadapt.core import tensor as T
from fedadapt.core.config import ModelConfig, to_container
from fedadapt.core.errors import ConfigError
from fedadapt.core.utils import config_hash, get_logger, log_hyperparameters
from fedadapt.data.datamodules import SpeechDataModule, collate_examples
from fedadapt.data.datasets import DomainDataset, DomainSpec, generate_domain, load_fixture, save_fixture
from fedadapt.data.ssl import RandomProjectionQuantizer, code_coverage
from fedadapt.federated.engine import FedConfig, check_sample_budget, run_centralized, run_federated
from fedadapt.federated.optimizers import AdamState
from fedadapt.federated.records import RoundRecord, summary_rows, write_csv, write_jsonl
from fedadapt.metrics.accounting import account, params_table
from fedadapt.metrics.evaluate import evaluate
from fedadapt.models.adapters import AdapterSpec
from fedadapt.models.checkpoint import (
    attach_decoder,
    file_digest,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from fedadapt.models.conformer import SpeechModel
from fedadapt.models.params import FreezePolicy, ParameterTree, set_freeze
from fedadapt.models.pl_speech import LitFrameDecoder, LitSslEncoder
from fedadapt.version import __version__

log = get_logger(__name__)

DOMAINS = ("ssl", "source", "source_eval", "target", "target_eval")
ENCODER_CKPT = "encoder.ckpt"
PRETRAINED_CKPT = "pretrained.ckpt"
TUNED_CKPT = "tuned.ckpt"


# ----------------------------------------------------------------------------
# config plumbing


def resolve_path(config: DictConfig, path: str) -> Path:
    path = Path(path)
    return path if path.is_absolute() else Path(config.work_dir) / path


def stage_dir(config: DictConfig, name: Optional[str] = None) -> Path:
    out = resolve_path(config, config.out_dir) / (name or config.stage.name)
    out.mkdir(parents=True, exist_ok=True)
    return out


def model_config(config: DictConfig) -> ModelConfig:
    return ModelConfig(**to_container(config.model))


def adapter_spec(config: DictConfig) -> Optional[AdapterSpec]:
    a = config.adapter
    if a.variant == "none":
        return None
    return AdapterSpec(a.variant, a.bottleneck, a.nonlinearity, a.internal_residual)


def dtype_of(config: DictConfig) -> torch.dtype:
    return T.get_dtype(config.precision)


def domain_spec(config: DictConfig, name: str) -> Tuple[DomainSpec, int, int]:
    data = config.data
    if name not in DOMAINS:
        raise ValueError(f"{name} is not a recognized domain, use one of {DOMAINS}")
    d = data[name]
    spec = DomainSpec(
        vocab_size=data.vocab_size,
        d_in=data.d_in,
        t_min=data.t_min,
        t_max=data.t_max,
        noise_scale=d.noise_scale,
        rotation_strength=d.rotation_strength,
        bias_scale=d.bias_scale,
        prior_shift=d.prior_shift,
        means_seed=data.means_seed,
        transform_seed=data.transform_seed,
        domain_id=d.domain_id,
    )
    return spec, d.n_examples, d.seed


def fixture_path(config: DictConfig, name: str) -> Path:
    return resolve_path(config, config.data.fixture_dir) / f"{name}.bin"


def load_domain(config: DictConfig, name: str) -> DomainDataset:
    return load_fixture(fixture_path(config, name))


def eval_sets(config: DictConfig) -> Dict[str, DomainDataset]:
    return {"source": load_domain(config, "source_eval"), "target": load_domain(config, "target_eval")}


def default_input(config: DictConfig, explicit: Optional[str], stage: str, filename: str) -> Path:
    if explicit:
        return resolve_path(config, explicit)
    return resolve_path(config, config.out_dir) / stage / filename


def make_trainer(config: DictConfig, out: Path, steps: int, name: str) -> Trainer:
    return hydra.utils.instantiate(
        config.trainer,
        max_steps=steps,
        max_epochs=-1,
        precision="64-true" if config.precision == 64 else "32-true",
        logger=CSVLogger(save_dir=str(out), name=name),
        default_root_dir=str(out),
    )


def write_manifest(
    config: DictConfig, out: Path, inputs: Dict[str, Path], outputs: Dict[str, Path], extra: Optional[dict] = None
) -> Path:
    manifest = {
        "stage": config.stage.name,
        "version": __version__,
        "seed": config.seed,
        "config_hash": config_hash(config),
        "inputs": {name: {"path": str(p), "sha256": file_digest(p)} for name, p in sorted(inputs.items())},
        "outputs": {name: {"path": str(p), "sha256": file_digest(p)} for name, p in sorted(outputs.items())},
    }
    manifest.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


# ----------------------------------------------------------------------------
# fixtures


def stage_make_fixtures(config: DictConfig) -> dict:
    """Generates every domain corpus and pins it as a fixture file."""
    out = stage_dir(config)
    outputs = {}
    for name in DOMAINS:
        spec, n, seed = domain_spec(config, name)
        dataset = generate_domain(spec, n, seed)
        path = fixture_path(config, name)
        digest = save_fixture(dataset, path)
        log.info(f"Fixture <{name}>: {n} examples -> {path} ({digest[:12]})")
        outputs[name] = path

    ssl = load_fixture(outputs["ssl"])
    quantizer = RandomProjectionQuantizer(
        config.data.d_in, config.stage.codebook_dim, config.stage.codebook_size, config.seed
    )
    coverage = code_coverage(quantizer, [ex.features for ex in ssl.examples])
    log.info(f"SSL codebook coverage: {coverage:.2%}")
    write_manifest(config, out, {}, outputs, {"codebook_coverage": coverage})
    return {"codebook_coverage": coverage, "fixtures": {k: str(v) for k, v in outputs.items()}}


# ----------------------------------------------------------------------------
# stage 1 and 2


def pretrain_encoder(config: DictConfig, out: Path) -> Tuple[SpeechModel, Path, dict]:
    ssl = load_domain(config, "ssl")
    dtype = dtype_of(config)
    model = SpeechModel(model_config(config), None, config.seed, with_decoder=False, dtype=dtype)
    s = config.stage
    lit = LitSslEncoder(model, s.ssl_lr, s.mask_prob, s.span_len, s.codebook_size, s.codebook_dim, config.seed)
    # the same masks over the same utterances before and after training
    held_batch = collate_examples(ssl.examples[: s.ssl_batch], dtype)
    loss_before = lit.fixed_mask_loss(held_batch, config.seed)
    if s.ssl_steps > 0:
        trainer = make_trainer(config, out, s.ssl_steps, "ssl")
        log_hyperparameters(config, ParameterTree(model), trainer.logger)
        log.info(f"Starting SSL pre-training for {s.ssl_steps} steps!")
        trainer.fit(lit, datamodule=SpeechDataModule(ssl, None, s.ssl_batch, config.seed, dtype))
    metrics = {"ssl_loss_before": loss_before, "ssl_loss_after": lit.fixed_mask_loss(held_batch, config.seed)}
    log.info(f"SSL loss on a fixed batch: {metrics['ssl_loss_before']:.4f} -> {metrics['ssl_loss_after']:.4f}")
    path = out / ENCODER_CKPT
    save_checkpoint(path, model, metadata={"stage": "pretrain_encoder", "ssl_steps": s.ssl_steps})
    return model, path, metrics


def stage_pretrain_encoder(config: DictConfig) -> dict:
    out = stage_dir(config)
    _, path, metrics = pretrain_encoder(config, out)
    write_json(out / "metrics.json", metrics)
    write_manifest(config, out, {"ssl": fixture_path(config, "ssl")}, {"encoder": path}, metrics)
    return {"checkpoint": str(path), **metrics}


def pretrain_decoder(
    config: DictConfig,
    encoder_path: Path,
    spec: Optional[AdapterSpec],
    strategy: str,
    out: Path,
) -> Tuple[SpeechModel, Path, dict]:
    if strategy == "with_adapters" and spec is None:
        raise ConfigError("strategy with_adapters needs adapter.variant other than none")
    if strategy == "without_adapters" and spec is not None:
        raise ConfigError(f"strategy without_adapters conflicts with adapter.variant={spec.variant.value}")
    if strategy not in ("with_adapters", "without_adapters"):
        raise ValueError(f"{strategy} is not a recognized strategy, use with_adapters or without_adapters")

    ckpt = load_checkpoint(encoder_path)
    dtype = dtype_of(config)
    model = attach_decoder(restore_model(ckpt, dtype))
    if ckpt.adapter_spec is None and spec is not None:
        model.encoder.insert_adapters(spec)
    tree = ParameterTree(model)
    set_freeze(tree, FreezePolicy.FREEZE_ENCODER_BASE)

    source = load_domain(config, "source")
    sets = eval_sets(config)
    before = evaluate(model, sets["source"])
    s = config.stage
    if s.decoder_steps > 0:
        trainer = make_trainer(config, out, s.decoder_steps, "decoder")
        log_hyperparameters(config, tree, trainer.logger)
        log.info(f"Starting decoder training ({strategy}) for {s.decoder_steps} steps!")
        datamodule = SpeechDataModule(source, sets["source"], s.decoder_batch, config.seed, dtype)
        trainer.fit(LitFrameDecoder(model, s.decoder_lr), datamodule=datamodule)
    metrics = {name: evaluate(model, ds) for name, ds in sets.items()}
    log.info(
        f"Source WER {before['wer']:.4f} -> {metrics['source']['wer']:.4f}, "
        f"target WER {metrics['target']['wer']:.4f}"
    )
    path = out / PRETRAINED_CKPT
    save_checkpoint(
        path,
        model,
        metadata={"stage": "pretrain_decoder", "strategy": strategy, "decoder_steps": s.decoder_steps},
    )
    return model, path, {"before": {"source": before}, "after": metrics}


def stage_pretrain_decoder(config: DictConfig) -> dict:
    out = stage_dir(config)
    encoder_path = default_input(config, config.stage.encoder_checkpoint, "pretrain_encoder", ENCODER_CKPT)
    _, path, metrics = pretrain_decoder(config, encoder_path, adapter_spec(config), config.stage.strategy, out)
    write_json(out / "metrics.json", metrics)
    write_manifest(config, out, {"encoder": encoder_path, "source": fixture_path(config, "source")}, {"pretrained": path})
    return metrics


# ----------------------------------------------------------------------------
# stage 3


def prepare_for_tuning(model: SpeechModel, spec: Optional[AdapterSpec]) -> Tuple[ParameterTree, bool]:
    """Inserts adapters when the model has none, then freezes everything else.

    Returns the tree and whether the adapters were freshly inserted.
    """
    existing = model.adapter_spec
    inserted = False
    if existing is None:
        if spec is None:
            raise ConfigError("model has no adapters and adapter.variant is none")
        model.encoder.insert_adapters(spec)
        inserted = True
    elif spec is not None and spec != existing:
        raise ConfigError(
            f"checkpoint carries {existing.variant.value} adapters (b={existing.bottleneck}) "
            f"but the config asks for {spec.variant.value} (b={spec.bottleneck})"
        )
    tree = ParameterTree(model)
    set_freeze(tree, FreezePolicy.FREEZE_ALL_BUT_ADAPTERS)
    return tree, inserted


def load_for_tuning(config: DictConfig, pt_path: Path, spec: Optional[AdapterSpec]):
    ckpt = load_checkpoint(pt_path)
    if not ckpt.has_decoder:
        raise ConfigError(f"{pt_path} has no decoder; run pretrain_decoder first")
    model = restore_model(ckpt, dtype_of(config))
    tree, inserted = prepare_for_tuning(model, spec)
    return model, tree, inserted, ckpt


def _final_eval(records: List[RoundRecord], baseline: Dict[str, dict]) -> Dict[str, dict]:
    for record in reversed(records):
        if record.eval:
            return record.eval
    return baseline


def fedtune(
    config: DictConfig,
    pt_path: Optional[Path],
    spec: Optional[AdapterSpec],
    out: Path,
    resume: Optional[Path] = None,
) -> Tuple[SpeechModel, List[RoundRecord], dict]:
    """Federated adapter tuning on the target domain.

    With ``resume`` set, tuning continues from an earlier fedtune checkpoint,
    server moments and round count included, and ``pt_path`` is not read.
    """
    fed = FedConfig.from_config(config.fed, config.seed)
    model, tree, inserted, ckpt = load_for_tuning(config, resume or pt_path, spec)
    start_round, server = 0, None
    if resume is not None:
        if ckpt.metadata.get("stage") != "fedtune":
            raise ConfigError(f"{resume} is not a fedtune checkpoint")
        start_round = ckpt.metadata["rounds"]
        inserted = ckpt.metadata["adapters_inserted"]
        if ckpt.optimizer is not None:
            server = AdamState.from_state_dict(ckpt.optimizer, dtype_of(config))
        log.info(f"Resuming federated tuning from {resume} after round {start_round}")
    elif fed.server_optimizer == "adam" and not fed.plain_average:
        server = AdamState.for_tree(tree, fed.server_lr)
    sets = eval_sets(config)
    target = load_domain(config, "target")
    baseline = {name: evaluate(model, ds) for name, ds in sets.items()}
    start_digest = tree.digest()
    records, _ = run_federated(tree, target, fed, sets, fed.eval_every, server_state=server, start_round=start_round)
    last_round = start_round + fed.rounds
    final = _final_eval(records, baseline)
    report = account(
        model.cfg, model.adapter_spec, policy=FreezePolicy.FREEZE_ALL_BUT_ADAPTERS, num_clients=fed.participants
    )

    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, out / "rounds.jsonl")
    write_csv(summary_rows(records), out / "summary.csv")
    ckpt_path = out / TUNED_CKPT
    save_checkpoint(
        ckpt_path,
        model,
        optimizer_state=server.state_dict() if server is not None else None,
        metadata={"stage": "fedtune", "rounds": last_round, "adapters_inserted": inserted},
    )
    metrics = {
        "adapters_inserted": inserted,
        "start_digest": start_digest,
        "updated_percent": report.updated_percent,
        "bytes_per_round": report.bytes_per_round,
        "rounds": last_round,
        "samples": last_round * fed.samples_per_round,
        "before": baseline,
        "after": final,
    }
    write_json(out / "metrics.json", metrics)
    return model, records, metrics


def stage_fedtune(config: DictConfig) -> dict:
    out = stage_dir(config)
    inputs = {"target": fixture_path(config, "target")}
    pt_path, resume, extra = None, None, None
    if config.stage.resume_checkpoint:
        resume = resolve_path(config, config.stage.resume_checkpoint)
        # read before the run, which may overwrite the file
        extra = {"resumed_from": {"path": str(resume), "sha256": file_digest(resume)}}
    else:
        pt_path = default_input(config, config.stage.pretrained_checkpoint, "pretrain_decoder", PRETRAINED_CKPT)
        inputs["pretrained"] = pt_path
    _, _, metrics = fedtune(config, pt_path, adapter_spec(config), out, resume)
    write_manifest(config, out, inputs, {"tuned": out / TUNED_CKPT}, extra)
    return metrics


def centralized_tune(
    config: DictConfig, pt_path: Path, spec: Optional[AdapterSpec], out: Path, eval_every: Optional[int] = None
) -> Tuple[SpeechModel, List[RoundRecord], dict]:
    model, tree, inserted, _ = load_for_tuning(config, pt_path, spec)
    sets = eval_sets(config)
    target = load_domain(config, "target")
    baseline = {name: evaluate(model, ds) for name, ds in sets.items()}
    start_digest = tree.digest()
    s = config.stage
    records, _ = run_centralized(
        tree,
        s.central_iterations,
        s.central_batch,
        s.central_lr,
        s.central_optimizer,
        target,
        seed=config.seed,
        eval_sets=sets,
        eval_every=eval_every or max(1, s.central_iterations // 10),
    )
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, out / "rounds.jsonl")
    write_csv(summary_rows(records), out / "summary.csv")
    save_checkpoint(out / TUNED_CKPT, model, metadata={"stage": "centralized_tune", "adapters_inserted": inserted})
    metrics = {
        "adapters_inserted": inserted,
        "start_digest": start_digest,
        "samples": s.central_iterations * s.central_batch,
        "before": baseline,
        "after": _final_eval(records, baseline),
    }
    write_json(out / "metrics.json", metrics)
    return model, records, metrics


def stage_centralized_tune(config: DictConfig) -> dict:
    out = stage_dir(config)
    pt_path = default_input(config, config.stage.pretrained_checkpoint, "pretrain_decoder", PRETRAINED_CKPT)
    _, _, metrics = centralized_tune(config, pt_path, adapter_spec(config), out)
    write_manifest(
        config, out, {"pretrained": pt_path, "target": fixture_path(config, "target")}, {"tuned": out / TUNED_CKPT}
    )
    return metrics


def _delta_rows(variant: str, arm: str, records: List[RoundRecord], baseline: Dict[str, dict]) -> List[dict]:
    rows = []
    for record in records:
        if not record.eval:
            continue
        rows.append(
            {
                "variant": variant,
                "arm": arm,
                "samples": record.samples,
                "target_wer": record.eval["target"]["wer"],
                "target_wer_delta": record.eval["target"]["wer"] - baseline["target"]["wer"],
                "source_wer": record.eval["source"]["wer"],
                "source_wer_delta": record.eval["source"]["wer"] - baseline["source"]["wer"],
            }
        )
    return rows


def stage_ablation(config: DictConfig) -> dict:
    """Federated versus centralized tuning per variant on a matched sample budget."""
    out = stage_dir(config)
    s = config.stage
    fed = FedConfig.from_config(config.fed, config.seed)
    budget = check_sample_budget(fed, s.central_iterations, s.central_batch)
    pt_path = default_input(config, s.pretrained_checkpoint, "pretrain_decoder", PRETRAINED_CKPT)
    start_digest = file_digest(pt_path)
    central_every = max(1, fed.eval_every * fed.samples_per_round // s.central_batch)
    log.info(f"Ablation on {budget} samples per arm from {pt_path} ({start_digest[:12]})")

    curves, summary = [], []
    for variant in s.variants:
        spec = AdapterSpec(variant, config.adapter.bottleneck, config.adapter.nonlinearity, config.adapter.internal_residual)
        arms = {}
        for arm in ("federated", "centralized"):
            arm_out = out / spec.variant.value / arm
            if arm == "federated":
                model, records, metrics = fedtune(config, pt_path, spec, arm_out)
            else:
                model, records, metrics = centralized_tune(config, pt_path, spec, arm_out, central_every)
            curves.extend(_delta_rows(spec.variant.value, arm, records, metrics["before"]))
            arms[arm] = metrics
        if arms["federated"]["start_digest"] != arms["centralized"]["start_digest"]:
            raise ConfigError(f"{spec.variant.value}: the two arms did not start from the same parameters")
        fed_wer = arms["federated"]["after"]["target"]["wer"]
        central_wer = arms["centralized"]["after"]["target"]["wer"]
        gap = abs(fed_wer - central_wer)
        summary.append(
            {
                "variant": spec.variant.value,
                "federated_target_wer": fed_wer,
                "centralized_target_wer": central_wer,
                "gap": gap,
                "within_gap": gap < s.max_gap,
                "start_digest": arms["federated"]["start_digest"],
            }
        )

    within = sum(row["within_gap"] for row in summary)
    passed = within >= s.min_within_gap
    message = f"{within}/{len(summary)} variants within a target-WER gap of {s.max_gap} (need {s.min_within_gap})"
    if passed:
        log.info(message)
    else:
        log.warning(message)

    curves_path = write_csv(curves, out / "ablation_curves.csv")
    summary_path = write_csv(summary, out / "ablation.csv")
    gap_report = {"max_gap": s.max_gap, "within_gap": within, "min_within_gap": s.min_within_gap, "passed": passed}
    write_manifest(
        config,
        out,
        {"pretrained": pt_path},
        {"curves": curves_path, "summary": summary_path},
        {"samples_per_arm": budget, "gap_check": gap_report},
    )
    return {"samples_per_arm": budget, "start_digest": start_digest, "summary": summary, "gap_check": gap_report}


# ----------------------------------------------------------------------------
# evaluation and reports


def stage_eval(config: DictConfig) -> dict:
    out = stage_dir(config)
    path = default_input(config, config.stage.pretrained_checkpoint, "fedtune", TUNED_CKPT)
    ckpt = load_checkpoint(path)
    if not ckpt.has_decoder:
        raise ConfigError(f"{path} has no decoder to evaluate")
    model = restore_model(ckpt, dtype_of(config))
    metrics = {name: evaluate(model, ds) for name, ds in eval_sets(config).items()}
    for name, m in metrics.items():
        log.info(f"{name}: wer={m['wer']:.4f} loss={m['loss']:.4f} frame_acc={m['frame_accuracy']:.4f}")
    result_path = write_json(out / "eval.json", metrics)
    write_manifest(config, out, {"checkpoint": path}, {"eval": result_path})
    return metrics


def stage_params_report(config: DictConfig) -> dict:
    """Updated-parameter share of every variant (and of full tuning) for ``config.model``."""
    out = stage_dir(config)
    rows = params_table(
        model_config(config), config.adapter.bottleneck, list(config.stage.variants), config.adapter.nonlinearity
    )
    for row in rows:
        log.info(
            f"{row['variant']:>14}: {row['updated_params']:>12,d} / {row['total_params']:,d} "
            f"updated ({row['updated_percent']:.2f}%)"
        )
    path = write_csv(rows, out / "params_report.csv")
    write_manifest(config, out, {}, {"report": path})
    return {"rows": rows}


def stage_family(config: DictConfig) -> dict:
    """All stage-2 models and all ten stage-3 tunings built from them."""
    out = stage_dir(config)
    encoder_path = default_input(config, config.stage.encoder_checkpoint, "pretrain_encoder", ENCODER_CKPT)
    a = config.adapter
    specs = [AdapterSpec(v, a.bottleneck, a.nonlinearity, a.internal_residual) for v in config.stage.variants]

    pretrained: Dict[str, Tuple[Path, Optional[AdapterSpec], dict]] = {}
    _, path, metrics = pretrain_decoder(config, encoder_path, None, "without_adapters", out / "pt_without_adapters")
    pretrained["without_adapters"] = (path, None, metrics["after"])
    for spec in specs:
        name = f"with_{spec.variant.value}"
        _, path, metrics = pretrain_decoder(config, encoder_path, spec, "with_adapters", out / f"pt_{name}")
        pretrained[name] = (path, spec, metrics["after"])

    pt_rows = [
        {"model": name, "source_wer": m["source"]["wer"], "target_wer": m["target"]["wer"]}
        for name, (_, _, m) in pretrained.items()
    ]

    family_rows = []
    index = 0
    for spec in specs:
        for pt_name in ("without_adapters", f"with_{spec.variant.value}"):
            index += 1
            pt_path, _, pt_metrics = pretrained[pt_name]
            model, _, metrics = fedtune(config, pt_path, spec, out / f"ft_{index:02d}_{pt_name}_{spec.variant.value}")
            after = metrics["after"]
            family_rows.append(
                {
                    "index": index,
                    "pt_model": pt_name,
                    "adapter": spec.variant.value,
                    "updated_percent": round(metrics["updated_percent"], 2),
                    "source_wer": after["source"]["wer"],
                    "target_wer": after["target"]["wer"],
                    "source_delta": after["source"]["wer"] - pt_metrics["source"]["wer"],
                    "target_delta": after["target"]["wer"] - pt_metrics["target"]["wer"],
                }
            )

    pt_csv = write_csv(pt_rows, out / "pretrained.csv")
    family_csv = write_csv(family_rows, out / "family.csv")
    write_manifest(config, out, {"encoder": encoder_path}, {"pretrained": pt_csv, "family": family_csv})
    return {"pretrained": pt_rows, "family": family_rows}


STAGE_FUNCTIONS = {
    "make_fixtures": stage_make_fixtures,
    "pretrain_encoder": stage_pretrain_encoder,
    "pretrain_decoder": stage_pretrain_decoder,
    "fedtune": stage_fedtune,
    "centralized_tune": stage_centralized_tune,
    "ablation": stage_ablation,
    "eval": stage_eval,
    "params_report": stage_params_report,
    "family": stage_family,
}
