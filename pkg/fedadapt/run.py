import os

os.environ["HYDRA_FULL_ERROR"] = "1"
import dotenv
import hydra
from omegaconf import DictConfig

from fedadapt.core.config import register_configs

# load environment variables from `.env` file if it exists
# recursively searches for `.env` in all folders starting from work dir
dotenv.load_dotenv(override=True)

register_configs()


@hydra.main(config_path="configs/", config_name="config.yaml", version_base=None)
def main(config: DictConfig):

    # Imports should be nested inside @hydra.main to optimize tab completion
    # Read more here: https://github.com/facebookresearch/hydra/issues/934
    from fedadapt.core import utils
    from fedadapt.experiments.train import train

    # A couple of optional utilities:
    # - disabling python warnings
    # - easier access to debug mode
    # - model sizes that follow the data generator
    utils.extras(config)

    # Pretty print config using Rich library
    if config.get("print_config"):
        utils.print_config(config, resolve=True)

    # Run the requested stage
    return train(config)


if __name__ == "__main__":
    main()
