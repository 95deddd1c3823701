import dataclasses
import random

import pytest
import torch
from conftest import adapted_model

from fedadapt.core.errors import BudgetMismatchError, ConfigError, DatasetError, FreezePolicyError
from fedadapt.data.datasets import generate_domain
from fedadapt.federated import (
    ClientUpdate,
    FedConfig,
    average_deltas,
    check_sample_budget,
    make_clients,
    partition_dataset,
    run_centralized,
    run_federated,
)
from fedadapt.federated.optimizers import AdamState
from fedadapt.federated.records import read_jsonl, summary_rows, write_jsonl
from fedadapt.models import FreezePolicy, ParameterTree, set_freeze
from fedadapt.models.checkpoint import load_checkpoint, restore_model, save_checkpoint


def adapter_tree(cfg, variant="seq_end", seed=0):
    tree = ParameterTree(adapted_model(cfg, variant, seed=seed))
    set_freeze(tree, FreezePolicy.FREEZE_ALL_BUT_ADAPTERS)
    return tree


def small_fed(**kwargs):
    defaults = dict(num_clients=4, client_batch=3, rounds=3, client_lr=0.05, server_lr=1e-3, seed=7, eval_every=1)
    defaults.update(kwargs)
    return FedConfig(**defaults)


@pytest.mark.parametrize("n, k, sizes", [(640, 64, {10}), (65, 64, {1, 2}), (24, 5, {4, 5})])
def test_partition_sizes_and_disjointness(tiny_domain, n, k, sizes):
    dataset = generate_domain(tiny_domain, n, seed=0)
    shards = partition_dataset(dataset, k, generator=torch.Generator().manual_seed(0))
    assert {len(s) for s in shards} == sizes
    assert sum(len(s) for s in shards) == n
    ids = [id(ex) for s in shards for ex in s.examples]
    assert len(set(ids)) == n
    assert set(ids) == {id(ex) for ex in dataset.examples}


def test_single_shard_keeps_corpus_order(source_set):
    (shard,) = partition_dataset(source_set, 1, generator=torch.Generator().manual_seed(3))
    assert shard.digest() == source_set.digest()


def test_partition_needs_enough_examples(source_set):
    with pytest.raises(DatasetError):
        partition_dataset(source_set, len(source_set) + 1)
    with pytest.raises(ValueError):
        partition_dataset(source_set, 2, scheme="dirichlet")


def test_average_of_hand_deltas():
    lr = 0.1
    updates = [
        ClientUpdate(0, {"w": torch.tensor([-lr * 1.0], dtype=torch.float64)}),
        ClientUpdate(1, {"w": torch.tensor([-lr * 3.0], dtype=torch.float64)}),
    ]
    assert torch.allclose(average_deltas(updates)["w"], torch.tensor([-0.2], dtype=torch.float64), atol=1e-15)


def test_average_is_independent_of_arrival_order():
    generator = torch.Generator().manual_seed(0)
    updates = [
        ClientUpdate(k, {"a": torch.randn(3, generator=generator), "b": torch.randn(2, 2, generator=generator)})
        for k in range(6)
    ]
    shuffled = list(updates)
    random.Random(1).shuffle(shuffled)
    expected, actual = average_deltas(updates), average_deltas(shuffled)
    assert list(actual) == ["a", "b"]
    for path in expected:
        assert torch.equal(expected[path], actual[path])


def test_identical_clients_average_to_their_delta():
    d = {"w": torch.tensor([0.3, -1.7, 2.5], dtype=torch.float64)}
    average = average_deltas([ClientUpdate(k, dict(d)) for k in range(5)])
    assert torch.allclose(average["w"], d["w"], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        average_deltas([])


def test_single_client_plain_average_is_centralized_sgd(tiny_cfg, source_set):
    fed_tree, central_tree = adapter_tree(tiny_cfg), adapter_tree(tiny_cfg)
    cfg = FedConfig(num_clients=1, client_batch=4, rounds=50, client_lr=0.05, plain_average=True, seed=3)
    run_federated(fed_tree, source_set, cfg)
    run_centralized(central_tree, 50, 4, 0.05, "sgd", source_set)
    for path in fed_tree.trainable_paths():
        assert torch.allclose(fed_tree[path], central_tree[path], rtol=0, atol=1e-12), path


def test_frozen_leaves_are_bitwise_unchanged(tiny_cfg, source_set):
    tree = adapter_tree(tiny_cfg, "parallel_both")
    frozen = {p: tree[p].detach().clone() for p in tree.frozen_paths()}
    trainable = tree.values(trainable_only=True)
    run_federated(tree, source_set, small_fed(rounds=100))
    for path, before in frozen.items():
        assert torch.equal(tree[path], before), path
    assert any(not torch.equal(tree[p], trainable[p]) for p in tree.trainable_paths())


def test_round_records_account_bytes(tiny_cfg, source_set, target_set):
    tree = adapter_tree(tiny_cfg)
    records, _ = run_federated(tree, source_set, small_fed(), eval_sets={"target": target_set})
    assert [r.round for r in records] == [1, 2, 3]
    for record in records:
        assert record.num_clients == 4
        assert len(record.client_delta_norms) == 4
        assert record.bytes_up == tree.trainable_count() * 8 * 4
        assert record.bytes_down == record.bytes_up
        assert set(record.eval) == {"target"}
    assert records[-1].samples == 3 * 4 * 3


def test_server_adam_moves_each_value_by_at_most_the_learning_rate(tiny_cfg, source_set):
    tree = adapter_tree(tiny_cfg)
    before = tree.values(trainable_only=True)
    cfg = small_fed(rounds=1, server_lr=1e-3)
    run_federated(tree, source_set, cfg)
    moved = torch.cat([(tree[p].detach() - before[p]).flatten() for p in tree.trainable_paths()]).abs()
    assert float(moved.max()) <= cfg.server_lr * (1 + 1e-9)
    assert float(moved.max()) > 0.5 * cfg.server_lr


def test_runs_are_deterministic(tiny_cfg, source_set):
    first, second = adapter_tree(tiny_cfg), adapter_tree(tiny_cfg)
    records_a, _ = run_federated(first, source_set, small_fed())
    records_b, _ = run_federated(second, source_set, small_fed())
    assert first.digest() == second.digest()
    assert [r.to_dict() for r in records_a] == [r.to_dict() for r in records_b]


def test_thread_pool_matches_serial_clients(tiny_cfg, source_set):
    serial, pooled = adapter_tree(tiny_cfg), adapter_tree(tiny_cfg)
    run_federated(serial, source_set, small_fed())
    run_federated(pooled, source_set, small_fed(max_workers=4))
    assert serial.digest() == pooled.digest()


def test_partial_participation(tiny_cfg, source_set):
    tree = adapter_tree(tiny_cfg)
    cfg = small_fed(clients_per_round=2)
    records, _ = run_federated(tree, source_set, cfg)
    assert all(r.num_clients == 2 for r in records)
    assert records[0].bytes_up == tree.trainable_count() * 8 * 2
    assert cfg.samples_per_round == 2 * 3


def test_zero_rounds_is_a_no_op(tiny_cfg, source_set):
    tree = adapter_tree(tiny_cfg)
    digest = tree.digest()
    records, same = run_federated(tree, source_set, small_fed(rounds=0))
    assert records == [] and same is tree and tree.digest() == digest


def test_nothing_trainable_is_refused(tiny_model, source_set):
    tree = ParameterTree(tiny_model)
    for leaf in tree.leaves().values():
        leaf.requires_grad_(False)
    with pytest.raises(FreezePolicyError):
        run_federated(tree, source_set, small_fed())


def test_client_payload_is_only_the_delta(tiny_cfg, source_set):
    assert [f.name for f in dataclasses.fields(ClientUpdate)] == ["client_id", "delta"]
    tree = adapter_tree(tiny_cfg)
    clients = make_clients(tree, source_set, small_fed())
    update = clients[1].local_update(tree.values(trainable_only=True), batch_size=3)
    assert isinstance(update, ClientUpdate)
    assert update.client_id == 1
    assert sorted(update.delta) == tree.trainable_paths()


def test_sample_budget():
    fed = FedConfig(num_clients=64, client_batch=10, rounds=1000)
    assert fed.total_samples == 640_000
    assert check_sample_budget(fed, 5000, 128) == 640_000
    with pytest.raises(BudgetMismatchError):
        check_sample_budget(fed, 5000, 100)


def test_centralized_records(tiny_cfg, source_set, target_set):
    tree = adapter_tree(tiny_cfg)
    records, _ = run_centralized(tree, 4, 5, 1e-3, "adam", source_set, eval_sets={"target": target_set}, eval_every=2)
    assert [r.samples for r in records] == [5, 10, 15, 20]
    assert all(r.num_clients == 0 and r.bytes_up == 0 for r in records)
    assert [bool(r.eval) for r in records] == [False, True, False, True]
    with pytest.raises(ValueError):
        run_centralized(tree, 1, 5, 1e-3, "lamb", source_set)


def test_records_round_trip_through_jsonl(tmp_path, tiny_cfg, source_set, target_set):
    records, _ = run_federated(adapter_tree(tiny_cfg), source_set, small_fed(), eval_sets={"target": target_set})
    path = write_jsonl(records, tmp_path / "rounds.jsonl")
    assert read_jsonl(path) == [r.to_dict() for r in records]
    rows = summary_rows(records)
    assert len(rows) == 3 and "target_wer" in rows[0]


def test_client_id_assignment_only_changes_summation_order(tiny_cfg, tiny_domain):
    dataset = generate_domain(tiny_domain, 128, seed=0)
    ids = list(range(64))
    random.Random(5).shuffle(ids)
    cfg = small_fed(num_clients=64, client_batch=2, rounds=2)
    ordered, permuted = adapter_tree(tiny_cfg), adapter_tree(tiny_cfg)
    run_federated(ordered, dataset, cfg)
    run_federated(permuted, dataset, cfg, client_ids=ids)
    for path in ordered.trainable_paths():
        assert torch.allclose(ordered[path], permuted[path], rtol=0, atol=1e-12), path


def test_client_ids_must_be_a_permutation(tiny_cfg, source_set):
    tree = adapter_tree(tiny_cfg)
    with pytest.raises(ValueError):
        make_clients(tree, source_set, small_fed(), client_ids=[0, 1, 1, 3])
    with pytest.raises(ValueError):
        make_clients(tree, source_set, small_fed(), client_ids=[0, 1, 2])


@pytest.mark.parametrize("clients_per_round", [None, 2])
def test_resumed_run_matches_uninterrupted_run(tmp_path, tiny_cfg, source_set, target_set, clients_per_round):
    first, then = 3, 4
    continuous = adapter_tree(tiny_cfg)
    all_records, _ = run_federated(
        continuous, source_set, small_fed(rounds=first + then, clients_per_round=clients_per_round),
        eval_sets={"target": target_set},
    )

    interrupted = adapter_tree(tiny_cfg)
    state = AdamState.for_tree(interrupted, 1e-3)
    cfg = small_fed(rounds=first, clients_per_round=clients_per_round)
    run_federated(interrupted, source_set, cfg, server_state=state)
    path = tmp_path / "tuned.ckpt"
    save_checkpoint(path, interrupted.module, state.state_dict(), metadata={"rounds": first})

    ckpt = load_checkpoint(path)
    resumed = ParameterTree(restore_model(ckpt))
    restored_state = AdamState.from_state_dict(ckpt.optimizer)
    assert restored_state.t == first
    records, _ = run_federated(
        resumed, source_set, small_fed(rounds=then, clients_per_round=clients_per_round),
        eval_sets={"target": target_set}, server_state=restored_state, start_round=ckpt.metadata["rounds"],
    )

    assert resumed.digest() == continuous.digest()
    assert restored_state.t == first + then
    assert [r.to_dict() for r in records] == [r.to_dict() for r in all_records[first:]]


def test_resume_needs_a_matching_server_state(tiny_cfg, source_set):
    tree = adapter_tree(tiny_cfg)
    with pytest.raises(ConfigError):
        run_federated(tree, source_set, small_fed(), start_round=2)
    with pytest.raises(ConfigError):
        run_federated(tree, source_set, small_fed(), server_state=AdamState.for_tree(tree, 1e-3), start_round=2)
    with pytest.raises(ValueError):
        run_federated(tree, source_set, small_fed(), start_round=-1)
    # plain averaging keeps no server state
    run_federated(tree, source_set, small_fed(plain_average=True), start_round=2)
