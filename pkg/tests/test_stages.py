import csv
import json
from pathlib import Path

import pytest
from conftest import adapted_model
from hydra import compose, initialize_config_dir

import fedadapt
from fedadapt.core import utils
from fedadapt.core.config import register_configs, validate_config
from fedadapt.core.errors import ConfigError
from fedadapt.experiments.stages import load_domain, model_config, prepare_for_tuning
from fedadapt.experiments.train import train
from fedadapt.federated.records import read_jsonl
from fedadapt.metrics.evaluate import evaluate
from fedadapt.models import AdapterSpec, SpeechModel
from fedadapt.models.checkpoint import file_digest, load_checkpoint

CONFIG_DIR = str(Path(fedadapt.__file__).parent / "configs")
ARMS = ("federated", "centralized")

register_configs()


def make_config(tmp_path, *overrides):
    with initialize_config_dir(config_dir=CONFIG_DIR, version_base=None):
        config = compose(config_name="config.yaml", overrides=[f"work_dir={tmp_path}", *overrides])
    utils.extras(config)
    return config


def test_default_config_is_valid(tmp_path):
    config = make_config(tmp_path)
    validate_config(config)
    assert config.stage.name == "fedtune"
    assert config.fed.num_clients * config.fed.client_batch * config.fed.rounds == 640_000


@pytest.mark.parametrize(
    "overrides",
    [
        ["fed.rounds=-1"],
        ["stage=pretrain_decoder", "stage.strategy=sometimes"],
        ["adapter=seq_end", "adapter.bottleneck=32"],
        ["precision=16"],
        ["fed.clients_per_round=65"],
        ["data.t_min=2"],
        ["data.t_min=40"],
    ],
)
def test_invalid_configs_are_rejected(tmp_path, overrides):
    with pytest.raises(ConfigError):
        validate_config(make_config(tmp_path, *overrides))


def test_config_hash_follows_the_config(tmp_path):
    a = utils.config_hash(make_config(tmp_path))
    assert a == utils.config_hash(make_config(tmp_path))
    assert a != utils.config_hash(make_config(tmp_path, "seed=1"))


def test_params_report_at_full_scale(tmp_path):
    config = make_config(tmp_path, "experiment=paper_accounting")
    result = train(config)
    percents = {row["variant"]: row["updated_percent"] for row in result["rows"]}
    assert percents["seq_end"] == 4.01 and percents["parallel_both"] == 7.71
    assert percents["full_tuning"] == 100.0

    out = tmp_path / "outputs" / "params_report"
    with (out / "params_report.csv").open() as f:
        assert len(list(csv.DictReader(f))) == 6
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == utils.config_hash(config)
    assert manifest["outputs"]["report"]["sha256"] == file_digest(out / "params_report.csv")


def test_prepare_for_tuning_refuses_mismatched_adapters(tiny_cfg):
    model = adapted_model(tiny_cfg, "seq_end")
    with pytest.raises(ConfigError):
        prepare_for_tuning(model, AdapterSpec("parallel_both", 2))
    tree, inserted = prepare_for_tuning(model, None)
    assert not inserted and set(tree.trainable_paths()) == set(tree.adapter_paths())


def test_prepare_for_tuning_inserts_identity_adapters(tiny_model):
    tree, inserted = prepare_for_tuning(tiny_model, AdapterSpec("parallel_end", 2))
    assert inserted and tree.trainable_count() == 2 * (2 * 8 * 2 + 2 + 8)
    with pytest.raises(ConfigError):
        prepare_for_tuning(SpeechModel(tiny_model.cfg, None, seed=1), None)


@pytest.mark.slow
def test_smoke_pipeline(tmp_path):
    def run(stage, *extra):
        return train(make_config(tmp_path, "experiment=smoke", "debug=true", f"stage={stage}", *extra))

    fixtures = run("make_fixtures")
    assert fixtures["codebook_coverage"] > 0.5
    run("pretrain_encoder")
    decoder = run("pretrain_decoder", "adapter.variant=none")
    assert set(decoder["after"]) == {"source", "target"}
    tuned = run("fedtune")
    assert tuned["adapters_inserted"]
    assert tuned["samples"] == 2 * 4 * 10

    out = tmp_path / "outputs"
    records = read_jsonl(out / "fedtune" / "rounds.jsonl")
    assert [r["round"] for r in records] == [1, 2]
    ckpt = load_checkpoint(out / "fedtune" / "tuned.ckpt")
    assert ckpt.adapter_spec.variant.value == "parallel_both"
    assert ckpt.optimizer["t"] == 2

    evaluated = run("eval")
    assert evaluated["target"]["wer"] == tuned["after"]["target"]["wer"]
    manifest = json.loads((out / "eval" / "manifest.json").read_text())
    assert manifest["inputs"]["checkpoint"]["sha256"] == file_digest(out / "fedtune" / "tuned.ckpt")


@pytest.mark.slow
def test_smoke_fedtune_resumes_where_it_stopped(tmp_path):
    def run(stage, *extra):
        return train(make_config(tmp_path, "experiment=smoke", "debug=true", f"stage={stage}", *extra))

    run("make_fixtures")
    run("pretrain_encoder")
    run("pretrain_decoder", "adapter.variant=none")
    first = run("fedtune")
    tuned = tmp_path / "outputs" / "fedtune" / "tuned.ckpt"
    digest = file_digest(tuned)

    resumed = run("fedtune", "stage.resume_checkpoint=outputs/fedtune/tuned.ckpt")
    assert resumed["adapters_inserted"] and resumed["rounds"] == 4
    assert resumed["samples"] == 2 * first["samples"]
    assert resumed["before"]["target"] == first["after"]["target"]

    out = tmp_path / "outputs" / "fedtune"
    assert [r["round"] for r in read_jsonl(out / "rounds.jsonl")] == [3, 4]
    ckpt = load_checkpoint(tuned)
    assert ckpt.optimizer["t"] == 4 and ckpt.metadata["rounds"] == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resumed_from"]["sha256"] == digest


@pytest.mark.slow
def test_smoke_encoder_checkpoint_is_reproducible(tmp_path):
    def run(stage, *extra):
        return train(make_config(tmp_path, "experiment=smoke", "debug=true", f"stage={stage}", *extra))

    run("make_fixtures")
    first = run("pretrain_encoder")
    digest = file_digest(first["checkpoint"])
    second = run("pretrain_encoder")
    assert file_digest(second["checkpoint"]) == digest
    assert second["ssl_loss_before"] == first["ssl_loss_before"]
    assert second["ssl_loss_after"] == first["ssl_loss_after"]


@pytest.mark.slow
def test_smoke_ablation_compares_arms_on_matched_budgets(tmp_path):
    def run(stage, *extra):
        return train(make_config(tmp_path, "experiment=smoke", "debug=true", f"stage={stage}", *extra))

    run("make_fixtures")
    run("pretrain_encoder")
    run("pretrain_decoder", "adapter.variant=none")
    result = run("ablation")

    # debug: 2 rounds x 4 clients x batch 10 against 2 iterations x batch 40
    assert result["samples_per_arm"] == 80
    assert [row["variant"] for row in result["summary"]] == ["seq_end", "parallel_both"]
    out = tmp_path / "outputs" / "ablation"
    for row in result["summary"]:
        arms = [json.loads((out / row["variant"] / arm / "metrics.json").read_text()) for arm in ARMS]
        assert arms[0]["start_digest"] == arms[1]["start_digest"] == row["start_digest"]
        assert arms[0]["samples"] == arms[1]["samples"] == 80
    gap = result["gap_check"]
    assert gap["max_gap"] == 0.05 and gap["min_within_gap"] == 2
    assert gap["within_gap"] >= 2 and gap["passed"]

    with (out / "ablation.csv").open() as f:
        assert len(list(csv.DictReader(f))) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["gap_check"] == gap


@pytest.mark.slow
def test_default_pipeline_trades_source_for_target(tmp_path):
    """Full default budgets up to 200 federated rounds; takes several minutes."""

    def run(stage, *extra):
        return train(make_config(tmp_path, f"stage={stage}", *extra))

    run("make_fixtures")
    config = make_config(tmp_path)
    untrained = evaluate(SpeechModel(model_config(config), None, config.seed), load_domain(config, "source_eval"))
    assert untrained["wer"] > 0.9

    encoder = run("pretrain_encoder")
    assert encoder["ssl_loss_after"] < encoder["ssl_loss_before"]

    decoder = run("pretrain_decoder", "adapter.variant=none")
    pretrained = decoder["after"]
    assert pretrained["source"]["wer"] < decoder["before"]["source"]["wer"]
    # the pretrained model is worse on the shifted domain
    assert pretrained["target"]["wer"] > pretrained["source"]["wer"] + 0.05
    assert pretrained["target"]["frame_accuracy"] < pretrained["source"]["frame_accuracy"]

    tuned = run("fedtune", "adapter=parallel_both", "fed.rounds=200")
    # identity adapters reproduce the pretrained model before the first round
    assert tuned["before"]["target"]["wer"] == pretrained["target"]["wer"]
    assert tuned["before"]["source"]["wer"] == pretrained["source"]["wer"]
    assert tuned["samples"] == 200 * 64 * 10
    assert tuned["after"]["target"]["wer"] < tuned["before"]["target"]["wer"]
    assert tuned["after"]["source"]["wer"] >= tuned["before"]["source"]["wer"]
