import hashlib
import json
import logging
import warnings
from typing import Optional, Sequence

import rich.syntax
import rich.tree
from omegaconf import DictConfig, OmegaConf
from pytorch_lightning.utilities import rank_zero_only


def get_logger(name=__name__, level=logging.INFO) -> logging.Logger:
    """Initializes multi-GPU-friendly python logger."""

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # this ensures all logging levels get marked with the rank zero decorator
    # otherwise logs would get multiplied for each GPU process in multi-GPU setup
    for level in ("debug", "info", "warning", "error", "exception", "fatal", "critical"):
        setattr(logger, level, rank_zero_only(getattr(logger, level)))

    return logger


def extras(config: DictConfig) -> None:
    """A couple of optional utilities, controlled by main config file:
    - disabling warnings
    - easier access to debug mode (tiny step and round budgets)
    - keeping the model and data vocab/feature sizes in sync

    Modifies DictConfig in place.

    Args:
        config (DictConfig): Configuration composed by Hydra.
    """

    log = get_logger()

    # enable adding new keys to config
    OmegaConf.set_struct(config, False)

    # Model input/output sizes always follow the data generator
    config.model.d_in = config.data.d_in
    config.model.vocab_size = config.data.vocab_size
    log.info(f"Features: {config.model.d_in}, vocab: {config.model.vocab_size} (+ blank)")

    # disable python warnings if <config.ignore_warnings=True>
    if config.get("ignore_warnings"):
        log.info("Disabling python warnings! <config.ignore_warnings=True>")
        warnings.filterwarnings("ignore")

    # shrink every budget if <config.debug=True>
    if config.get("debug"):
        log.info("Running in debug mode! <config.debug=True>")
        config.stage.ssl_steps = min(config.stage.ssl_steps, 5)
        config.stage.decoder_steps = min(config.stage.decoder_steps, 5)
        config.fed.rounds = min(config.fed.rounds, 2)
        config.fed.num_clients = min(config.fed.num_clients, 4)
        config.fed.eval_every = 1
        config.stage.central_iterations = config.fed.rounds
        config.stage.central_batch = config.fed.num_clients * config.fed.client_batch

    # disable adding new keys to config
    OmegaConf.set_struct(config, True)


@rank_zero_only
def print_config(
    config: DictConfig,
    fields: Sequence[str] = (
        "stage",
        "model",
        "adapter",
        "fed",
        "data",
        "seed",
        "out_dir",
    ),
    resolve: bool = True,
) -> None:
    """Prints content of DictConfig using Rich library and its tree structure.

    Args:
        config (DictConfig): Configuration composed by Hydra.
        fields (Sequence[str], optional): Determines which main fields from config will
        be printed and in what order.
        resolve (bool, optional): Whether to resolve reference fields of DictConfig.
    """

    style = "dim"
    tree = rich.tree.Tree(":gear: CONFIG", style=style, guide_style=style)

    for field in fields:
        branch = tree.add(field, style=style, guide_style=style)

        config_section = config.get(field)
        branch_content = str(config_section)
        if isinstance(config_section, DictConfig):
            branch_content = OmegaConf.to_yaml(config_section, resolve=resolve)

        branch.add(rich.syntax.Syntax(branch_content, "yaml"))

    rich.print(tree)


def config_hash(config: DictConfig) -> str:
    """Stable hash of the resolved config, used in stage manifests."""
    container = OmegaConf.to_container(config, resolve=True)
    return hashlib.sha256(json.dumps(container, sort_keys=True).encode("utf-8")).hexdigest()


def log_hyperparameters(config: DictConfig, tree, logger=None) -> Optional[dict]:
    """Controls which parameters from the Hydra config are saved by the Lightning loggers.

    Additionaly saves:
        - number of total, trainable and frozen leaves of the ParameterTree
    """

    hparams = {}

    # choose which parts of hydra config will be saved to loggers
    hparams["stage"] = OmegaConf.to_container(config["stage"], resolve=True)
    hparams["model"] = OmegaConf.to_container(config["model"], resolve=True)
    hparams["adapter"] = OmegaConf.to_container(config["adapter"], resolve=True)
    hparams["fed"] = OmegaConf.to_container(config["fed"], resolve=True)
    hparams["seed"] = config["seed"]

    # save number of model parameters
    hparams["model/params_total"] = tree.total_count()
    hparams["model/params_trainable"] = tree.trainable_count()
    hparams["model/params_not_trainable"] = tree.frozen_count()

    if logger is not None:
        logger.log_hyperparams(hparams)
    return hparams
