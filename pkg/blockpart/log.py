"""
Logging setup: rich console output plus an optional plain-text log file.
"""

import logging
from pathlib import Path
from typing import Optional, Union

from rich.logging import RichHandler

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: Union[int, str] = logging.INFO,
                      log_file: Optional[Union[str, Path]] = None,
                      rich_console: bool = True) -> logging.Logger:
    """Configure the ``blockpart`` logger hierarchy once per process.

    Args:
        level: Log level name or number.
        log_file: Optional path; a plain-format file handler is attached when given.
        rich_console: Use ``RichHandler`` for the console, otherwise a plain stream handler.

    Returns:
        The ``blockpart`` root logger.
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())

    handlers = []
    if rich_console:
        handlers.append(RichHandler(rich_tracebacks=True, show_path=False))
    else:
        stream = logging.StreamHandler()
        stream.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(stream)

    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)

    logger = logging.getLogger("blockpart")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    for handler in handlers:
        logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger
