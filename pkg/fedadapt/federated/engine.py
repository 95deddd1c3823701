"""FedAvg simulation with client SGD, an adaptive server optimizer and a byte ledger.

Clients run in-process. Each owns a shard of the training corpus and a private
copy of the model whose frozen leaves are shared with the global model; the only
thing a client hands back is the delta of its trainable leaves.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import torch

from fedadapt.core import tensor as T
from fedadapt.core.errors import BudgetMismatchError, ConfigError, DatasetError, FreezePolicyError
from fedadapt.core.utils import get_logger
from fedadapt.data.datasets import DomainDataset, Example
from fedadapt.federated.optimizers import AdamState, SgdState, adam_step, additive_step, sgd_step
from fedadapt.federated.records import RoundRecord
from fedadapt.metrics.evaluate import batch_loss, evaluate
from fedadapt.models.params import ParameterTree, delta, l2_norm

log = get_logger(__name__)

SERVER_OPTIMIZERS = ("adam", "sgd")
PARTITION_SCHEMES = ("iid_shard",)


@dataclass(frozen=True)
class FedConfig:
    num_clients: int = 64
    client_batch: int = 10
    rounds: int = 1000
    local_iterations_per_round: int = 1
    client_lr: float = 1e-4
    server_lr: float = 2e-4
    seed: int = 0
    server_optimizer: str = "adam"
    plain_average: bool = False
    clients_per_round: Optional[int] = None
    max_workers: int = 1
    eval_every: int = 100

    def __post_init__(self):
        for name in ("num_clients", "client_batch", "local_iterations_per_round", "max_workers", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.client_lr <= 0 or self.server_lr <= 0:
            raise ConfigError("client_lr and server_lr must be positive")
        if self.server_optimizer not in SERVER_OPTIMIZERS:
            raise ValueError(
                f"{self.server_optimizer} is not a recognized server optimizer, use one of {SERVER_OPTIMIZERS}"
            )
        if self.clients_per_round is not None and not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigError(f"clients_per_round must be in [1, {self.num_clients}], got {self.clients_per_round}")

    @property
    def participants(self) -> int:
        return self.num_clients if self.clients_per_round is None else self.clients_per_round

    @property
    def samples_per_round(self) -> int:
        return self.participants * self.client_batch * self.local_iterations_per_round

    @property
    def total_samples(self) -> int:
        return self.samples_per_round * self.rounds

    @classmethod
    def from_config(cls, section, seed: int) -> "FedConfig":
        return cls(
            num_clients=section.num_clients,
            client_batch=section.client_batch,
            rounds=section.rounds,
            local_iterations_per_round=section.local_iterations_per_round,
            client_lr=section.client_lr,
            server_lr=section.server_lr,
            seed=seed,
            server_optimizer=section.server_optimizer,
            plain_average=section.plain_average,
            clients_per_round=section.clients_per_round,
            max_workers=section.max_workers,
            eval_every=section.eval_every,
        )


def centralized_samples(iterations: int, batch: int) -> int:
    return iterations * batch


def check_sample_budget(fed: FedConfig, iterations: int, batch: int) -> int:
    """Returns the shared budget or raises when the two arms would see different sample counts."""
    central = centralized_samples(iterations, batch)
    if fed.total_samples != central:
        raise BudgetMismatchError(
            f"federated budget {fed.num_clients}x{fed.client_batch}x{fed.rounds}x"
            f"{fed.local_iterations_per_round} = {fed.total_samples} != centralized {iterations}x{batch} = {central}"
        )
    return central


def partition_dataset(
    dataset: DomainDataset,
    num_clients: int,
    scheme: str = "iid_shard",
    generator: Optional[torch.Generator] = None,
) -> List[DomainDataset]:
    """Disjoint, exhaustive shards whose sizes differ by at most one.

    Shard k takes every K-th position of a seeded permutation; each shard keeps
    its examples in corpus order.
    """
    if scheme not in PARTITION_SCHEMES:
        raise ValueError(f"{scheme} is not a recognized partition scheme, use one of {PARTITION_SCHEMES}")
    if num_clients < 1:
        raise ValueError(f"num_clients must be positive, got {num_clients}")
    if len(dataset) < num_clients:
        raise DatasetError(f"{len(dataset)} examples cannot be split across {num_clients} clients")
    perm = torch.randperm(len(dataset), generator=generator).tolist()
    return [dataset.subset(sorted(perm[k::num_clients])) for k in range(num_clients)]


class CyclicSampler:
    """Walks a corpus batch by batch, wrapping around at the end."""

    def __init__(self, dataset: DomainDataset):
        if len(dataset) == 0:
            raise DatasetError("cannot sample batches from an empty corpus")
        self.dataset = dataset
        self.position = 0

    def next_batch(self, size: int) -> List[Example]:
        n = len(self.dataset)
        batch = [self.dataset[(self.position + i) % n] for i in range(size)]
        self.skip(size)
        return batch

    def skip(self, size: int) -> None:
        self.position = (self.position + size) % len(self.dataset)


@dataclass(frozen=True)
class ClientUpdate:
    """The whole client-to-server payload."""

    client_id: int
    delta: Dict[str, torch.Tensor]


def local_sgd(tree: ParameterTree, examples: Sequence[Example], state: SgdState) -> float:
    """One SGD step of ``tree`` on ``examples``; returns the pre-step loss."""
    tree.zero_grad()
    loss = batch_loss(tree.module, examples)
    T.backward(loss, tree.trainable().values())
    sgd_step(tree, tree.grads(), state)
    return float(loss.detach())


class Client:
    def __init__(self, client_id: int, shard: DomainDataset, tree: ParameterTree, learning_rate: float):
        if len(shard) == 0:
            raise DatasetError(f"client {client_id} has an empty shard")
        self.client_id = client_id
        self.tree = tree
        self.sampler = CyclicSampler(shard)
        self.sgd = SgdState(learning_rate)

    def sync(self, global_values: Mapping[str, torch.Tensor]) -> None:
        self.tree.load_values(global_values, strict=False)

    def local_update(
        self, global_values: Mapping[str, torch.Tensor], batch_size: int, iterations: int = 1
    ) -> ClientUpdate:
        self.sync(global_values)
        for _ in range(iterations):
            local_sgd(self.tree, self.sampler.next_batch(batch_size), self.sgd)
        after = self.tree.values(trainable_only=True)
        return ClientUpdate(self.client_id, delta(after, global_values))


def make_clients(
    tree: ParameterTree,
    dataset: DomainDataset,
    cfg: FedConfig,
    generator: Optional[torch.Generator] = None,
    client_ids: Optional[Sequence[int]] = None,
) -> List[Client]:
    """One client per shard; shard k goes to ``client_ids[k]`` (k itself by default)."""
    ids = list(range(cfg.num_clients)) if client_ids is None else list(client_ids)
    if sorted(ids) != list(range(cfg.num_clients)):
        raise ValueError(f"client_ids must be a permutation of 0..{cfg.num_clients - 1}")
    shards = partition_dataset(dataset, cfg.num_clients, generator=generator)
    return [Client(ids[k], shard, tree.client_copy(), cfg.client_lr) for k, shard in enumerate(shards)]


def advance_clients(clients: Sequence[Client], cfg: FedConfig, generator: torch.Generator, rounds: int) -> None:
    """Replays the client draws and batch positions of ``rounds`` finished rounds, without training."""
    for _ in range(rounds):
        for client in select_clients(clients, cfg, generator):
            client.sampler.skip(cfg.client_batch * cfg.local_iterations_per_round)


def average_deltas(updates: Sequence[ClientUpdate]) -> Dict[str, torch.Tensor]:
    """(1/K) sum of deltas, summed per path in ascending client id order."""
    if not updates:
        raise ValueError("no client updates to average")
    ordered = sorted(updates, key=lambda u: u.client_id)
    average = {}
    for path in sorted(ordered[0].delta):
        total = torch.zeros_like(ordered[0].delta[path])
        for update in ordered:
            total = total + update.delta[path]
        average[path] = total / len(ordered)
    return average


def apply_server_update(
    tree: ParameterTree,
    average: Mapping[str, torch.Tensor],
    cfg: FedConfig,
    server_state: Optional[AdamState],
) -> None:
    if cfg.plain_average:
        additive_step(tree, average)
        return
    pseudo_grads = {path: -value for path, value in average.items()}
    if cfg.server_optimizer == "adam":
        adam_step(tree, pseudo_grads, server_state)
    else:
        sgd_step(tree, pseudo_grads, SgdState(cfg.server_lr))


def bytes_per_value(tree: ParameterTree) -> int:
    return torch.finfo(tree.module.dtype).bits // 8


def select_clients(clients: Sequence[Client], cfg: FedConfig, generator: torch.Generator) -> List[Client]:
    if cfg.clients_per_round is None or cfg.clients_per_round == len(clients):
        return list(clients)
    chosen = torch.randperm(len(clients), generator=generator)[: cfg.clients_per_round]
    return [clients[i] for i in sorted(chosen.tolist())]


def run_round(
    tree: ParameterTree,
    clients: Sequence[Client],
    cfg: FedConfig,
    server_state: Optional[AdamState],
    generator: torch.Generator,
    round_index: int = 1,
) -> RoundRecord:
    global_values = tree.values(trainable_only=True)
    participants = select_clients(clients, cfg, generator)

    def work(client: Client) -> ClientUpdate:
        return client.local_update(global_values, cfg.client_batch, cfg.local_iterations_per_round)

    if cfg.max_workers > 1 and len(participants) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            updates = list(pool.map(work, participants))
    else:
        updates = [work(client) for client in participants]

    # barrier: reduction order is fixed regardless of completion order
    updates.sort(key=lambda u: u.client_id)
    average = average_deltas(updates)
    with torch.no_grad():
        apply_server_update(tree, average, cfg, server_state)

    paths = sorted(average)
    return RoundRecord(
        round=round_index,
        client_delta_norms=[l2_norm(u.delta, paths) for u in updates],
        aggregated_delta_norm=l2_norm(average, paths),
        trainable_count=tree.trainable_count(),
        num_clients=len(updates),
        bytes_per_value=bytes_per_value(tree),
    )


def _evaluate_all(model, eval_sets: Optional[Mapping[str, DomainDataset]]) -> Dict[str, Dict[str, float]]:
    return {name: evaluate(model, ds) for name, ds in sorted((eval_sets or {}).items())}


def _should_eval(step: int, total: int, every: int) -> bool:
    return step % every == 0 or step == total


def run_federated(
    tree: ParameterTree,
    dataset: DomainDataset,
    cfg: FedConfig,
    eval_sets: Optional[Mapping[str, DomainDataset]] = None,
    eval_every: Optional[int] = None,
    server_state: Optional[AdamState] = None,
    start_round: int = 0,
    client_ids: Optional[Sequence[int]] = None,
) -> Tuple[List[RoundRecord], ParameterTree]:
    """Runs ``cfg.rounds`` FedAvg rounds on ``tree`` in place.

    Pass ``server_state`` to keep hold of the server moments; it is advanced in
    place. A run resumed with ``start_round=N`` and the state saved after round
    N continues exactly where the original run left off, round numbers included.
    """
    if start_round < 0:
        raise ValueError(f"start_round must be >= 0, got {start_round}")
    if cfg.rounds == 0:
        return [], tree
    if tree.trainable_count() == 0:
        raise FreezePolicyError("federated tuning needs at least one trainable leaf")
    uses_adam = cfg.server_optimizer == "adam" and not cfg.plain_average
    if uses_adam and server_state is None:
        if start_round:
            raise ConfigError("resuming a run with a server Adam needs its saved state")
        server_state = AdamState.for_tree(tree, cfg.server_lr)
    if uses_adam and server_state.t != start_round:
        raise ConfigError(
            f"server state has taken {server_state.t} steps but the run resumes after round {start_round}"
        )
    eval_every = eval_every or cfg.eval_every
    generator = torch.Generator().manual_seed(cfg.seed)
    clients = make_clients(tree, dataset, cfg, generator, client_ids)
    advance_clients(clients, cfg, generator, start_round)
    last = start_round + cfg.rounds
    log.info(
        f"Federated tuning: {cfg.num_clients} clients x batch {cfg.client_batch}, rounds {start_round + 1}..{last}, "
        f"{tree.trainable_count()} trainable values"
    )

    records = []
    for r in range(start_round + 1, last + 1):
        record = run_round(tree, clients, cfg, server_state, generator, round_index=r)
        record.samples = r * cfg.samples_per_round
        if eval_sets and _should_eval(r, last, eval_every):
            record.eval = _evaluate_all(tree.module, eval_sets)
            summary = ", ".join(f"{k} wer={v['wer']:.4f}" for k, v in record.eval.items())
            log.info(f"Round {r}/{last}: |avg delta|={record.aggregated_delta_norm:.3e}, {summary}")
        records.append(record)
    return records, tree


def run_centralized(
    tree: ParameterTree,
    iterations: int,
    batch: int,
    lr: float,
    optimizer_kind: str,
    dataset: DomainDataset,
    seed: int = 0,
    eval_sets: Optional[Mapping[str, DomainDataset]] = None,
    eval_every: int = 100,
    shuffle: bool = False,
) -> Tuple[List[RoundRecord], ParameterTree]:
    """Plain minibatch training, cycling over ``dataset``; records share the federated schema."""
    if optimizer_kind not in SERVER_OPTIMIZERS:
        raise ValueError(f"{optimizer_kind} is not a recognized optimizer, use one of {SERVER_OPTIMIZERS}")
    if iterations == 0:
        return [], tree
    if tree.trainable_count() == 0:
        raise FreezePolicyError("centralized tuning needs at least one trainable leaf")
    if shuffle:
        generator = torch.Generator().manual_seed(seed)
        dataset = dataset.subset(torch.randperm(len(dataset), generator=generator).tolist())
    sampler = CyclicSampler(dataset)
    state = AdamState.for_tree(tree, lr) if optimizer_kind == "adam" else SgdState(lr)
    log.info(f"Centralized tuning: {iterations} iterations x batch {batch} with {optimizer_kind}")

    records = []
    for i in range(1, iterations + 1):
        before = tree.values(trainable_only=True)
        tree.zero_grad()
        loss = batch_loss(tree.module, sampler.next_batch(batch))
        T.backward(loss, tree.trainable().values())
        if optimizer_kind == "adam":
            adam_step(tree, tree.grads(), state)
        else:
            sgd_step(tree, tree.grads(), state)
        step = delta(tree.values(trainable_only=True), before)
        record = RoundRecord(
            round=i,
            client_delta_norms=[],
            aggregated_delta_norm=l2_norm(step),
            trainable_count=tree.trainable_count(),
            num_clients=0,
            samples=i * batch,
        )
        if eval_sets and _should_eval(i, iterations, eval_every):
            record.eval = _evaluate_all(tree.module, eval_sets)
            summary = ", ".join(f"{k} wer={v['wer']:.4f}" for k, v in record.eval.items())
            log.info(f"Iteration {i}/{iterations}: loss={float(loss.detach()):.4f}, {summary}")
        records.append(record)
    tree.zero_grad()
    return records, tree
