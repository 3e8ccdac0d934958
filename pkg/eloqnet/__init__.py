"""
Eloquent cortex localization from dynamic functional connectivity.

A multi-task graph convolutional network with LSTM temporal attention,
together with the data simulation, training and evaluation tooling around it.
"""

import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from logging.handlers import RotatingFileHandler

from . import utils

__all__ = [
    "cli",
    "connectivity",
    "diffcore",
    "errors",
    "evaluation",
    "fileio",
    "layers",
    "loss",
    "model",
    "settings",
    "synthdata",
    "training",
    "utils",
]

DEFAULT_LOG_FILE_NAME = "eloqnet.log"
DEFAULT_LOG_MAX_BYTES = 5 * 1024 * 1024
DEFAULT_LOG_BACKUP_COUNT = 3


def _setup_logging():
    """Setup logging configuration for the eloqnet library."""
    handlers = [logging.StreamHandler(sys.stdout)]

    log_dir = utils.ELOQNET_DEFAULT_USER_DIR / "logs"
    try:
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(
            RotatingFileHandler(
                log_dir / DEFAULT_LOG_FILE_NAME,
                maxBytes=DEFAULT_LOG_MAX_BYTES,
                backupCount=DEFAULT_LOG_BACKUP_COUNT,
            )
        )
    except OSError:
        # Read-only home: console logging only
        pass

    logging.basicConfig(
        level=logging.WARNING,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )

    logger = logging.getLogger("eloqnet")
    logger.setLevel(logging.WARNING)


# Setup logging when module is imported
_setup_logging()

try:
    __version__ = version("eloqnet")
except PackageNotFoundError:
    # Package metadata is unavailable in source-only/dev contexts.
    __version__ = "0+unknown"
__description__ = "Eloquent cortex localization with dynamic connectivity"
