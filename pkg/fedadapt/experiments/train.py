from typing import Optional

from omegaconf import DictConfig
from pytorch_lightning import seed_everything

from fedadapt.core import utils
from fedadapt.core.config import validate_config
from fedadapt.experiments.stages import STAGE_FUNCTIONS

log = utils.get_logger(__name__)


def train(config: DictConfig) -> Optional[dict]:
    """Runs the pipeline stage named by ``config.stage.name``.

    Args:
        config (DictConfig): Configuration composed by Hydra.

    Returns:
        Optional[dict]: Summary metrics of the stage.
    """

    validate_config(config)

    # Set seed for random number generators in pytorch, numpy and python.random
    seed_everything(config.seed, workers=True)

    stage = config.stage.name
    log.info(f"Running stage <{stage}> with seed {config.seed}")
    result = STAGE_FUNCTIONS[stage](config)
    log.info(f"Stage <{stage}> finished!")
    return result
