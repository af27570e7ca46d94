"""
Configuration module for the CFC simulator.

This module handles debug mode configuration, logging setup and the
environment-driven defaults (worker threads, console log level).
"""

import os
import sys

from dotenv import load_dotenv
from loguru import logger

load_dotenv()

# Global debug flag
DEBUG: bool = False

LOG_FILE = "cfc_sim.log"


def set_debug(debug: bool) -> None:
    """
    Set the debug mode globally.

    Args:
        debug: Boolean flag to enable/disable debug mode
    """
    global DEBUG
    DEBUG = debug

    if DEBUG:
        logger.debug("Debug mode enabled")
    else:
        logger.debug("Debug mode disabled")


def console_level() -> str:
    """Console log level: DEBUG when debug is set, else CFC_LOG_LEVEL or INFO."""
    if DEBUG:
        return "DEBUG"
    return os.getenv("CFC_LOG_LEVEL", "INFO").upper()


def save_logs(save: bool = False) -> None:
    """
    Configure logging to save logs to a file.

    Args:
        save: Boolean flag to enable/disable log file saving (default: False)
    """
    if save:
        # Remove default console handler and add file handler
        logger.remove()
        logger.add(LOG_FILE, rotation="10 MB", retention="7 days", level="DEBUG")
        logger.info(f"Logs will be saved to {LOG_FILE}")
    else:
        # Remove all handlers and add back console handler
        logger.remove()
        logger.add(sys.stderr, level=console_level())
        logger.debug("Logs will be output to console only")


def default_threads() -> int:
    """
    Worker count for sweeps, read from CFC_THREADS.

    Returns:
        Positive thread count; falls back to the CPU count when unset or invalid
    """
    raw = os.getenv("CFC_THREADS")
    if raw:
        try:
            threads = int(raw)
            if threads > 0:
                return threads
        except ValueError:
            pass
        logger.warning(f"Ignoring invalid CFC_THREADS={raw!r}")
    return max(1, os.cpu_count() or 1)
