"""
Console and Logging
Shared rich console plus module loggers routed through RichHandler
"""

import logging
import os

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

load_dotenv()

console = Console()

_ROOT_LOGGER = "modules"
_configured = False


def configure_logging(level: str = None) -> None:
    """Attach a single RichHandler to the package logger"""
    global _configured
    level = (level or os.getenv("MGC_LOG_LEVEL", "INFO")).upper()

    logger = logging.getLogger(_ROOT_LOGGER)
    logger.handlers.clear()
    handler = RichHandler(console=console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    _configured = True


def get_logger(name: str) -> logging.Logger:
    """Logger for a module, configuring the package handler on first use"""
    if not _configured:
        configure_logging()
    return logging.getLogger(name)


def status(message: str) -> None:
    """Print a user-facing status line"""
    console.print(message, highlight=False, markup=False)
