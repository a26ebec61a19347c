import logging
from dataclasses import dataclass
from typing import Optional

from config import Config, SystemConfig, cache_dir_from_env, default_config, log_level_from_env, parse_and_validate
import extensions

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass
class App:
    """What a command runs against: the validated config and the cache in use."""

    config: SystemConfig
    cache_dir: Optional[str] = None
    log_level: str = Config.LOG_LEVEL


def configure_logging(level=None):
    level = (level or log_level_from_env()).upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)
    # basicConfig is a no-op once handlers exist; keep the requested level anyway
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))
    return level


def create_app(config_path=None, log_level=None, cache_dir=None):
    """
    Application factory.

    Sets up logging, attaches the on-disk expectation cache when a directory
    is given (flag or DBPSIM_CACHE_DIR) and loads the config file, falling
    back to the built-in defaults.
    """
    level = configure_logging(log_level)
    cache_dir = cache_dir or cache_dir_from_env()
    extensions.init_cache(cache_dir)

    if config_path is None:
        config = default_config()
    else:
        config = parse_and_validate(config_path)
    logging.getLogger(__name__).debug(f"App ready with config {config.config_hash}")
    return App(config=config, cache_dir=cache_dir, log_level=level)
