from .engine import (
    Client,
    ClientUpdate,
    FedConfig,
    average_deltas,
    check_sample_budget,
    make_clients,
    partition_dataset,
    run_centralized,
    run_federated,
    run_round,
)
from .optimizers import AdamState, SgdState, adam_step, additive_step, sgd_step
from .records import RoundRecord
