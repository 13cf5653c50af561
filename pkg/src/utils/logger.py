import logging
import os
from typing import Optional


LOG_FORMAT = '[%(asctime)s] %(levelname)s %(name)s - %(message)s'

_level_override: Optional[str] = None


def set_log_level(level: str) -> None:
    """Force a level on every logger handed out so far and from now on (used by --verbose/--quiet)."""
    global _level_override
    _level_override = level.upper()
    for name in list(logging.root.manager.loggerDict):
        if name == "src" or name.startswith("src.") or name == "cli":
            logging.getLogger(name).setLevel(_level_override)


def get_logger(name: str) -> logging.Logger:
    level = _level_override or os.getenv("LOG_LEVEL", "INFO").upper()
    logger = logging.getLogger(name)
    if not logger.handlers:
        logger.setLevel(level)
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(handler)
        logger.propagate = False
    return logger
