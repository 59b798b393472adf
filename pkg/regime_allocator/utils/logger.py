"""Structured logging utilities.

Every record carries a ``run_context`` field (``config=<hash prefix> seed=<n>``
once a run is bound, ``-`` before) so log lines can be matched to artifacts.
"""

from __future__ import annotations

import logging
import sys
from typing import Any, Optional

from regime_allocator.utils.config import get_settings


_LOGGER_INITIALIZED = False
_RUN_CONTEXT = "-"
_BASE_FACTORY = logging.getLogRecordFactory()


def _record_factory(*args: Any, **kwargs: Any) -> logging.LogRecord:
    record = _BASE_FACTORY(*args, **kwargs)
    record.run_context = _RUN_CONTEXT
    return record


def bind_run_context(config_hash: str, seed: int) -> None:
    """Tag subsequent log records with the run's provenance."""
    global _RUN_CONTEXT
    _RUN_CONTEXT = f"config={config_hash[:12]} seed={seed}"


def current_run_context() -> str:
    return _RUN_CONTEXT


def configure_logging(level: Optional[str] = None) -> None:
    """Configure process-wide logging once.

    Records go to stderr; stdout is reserved for command output.
    """

    global _LOGGER_INITIALIZED
    if _LOGGER_INITIALIZED:
        if level is not None:
            logging.getLogger().setLevel(level.upper())
        return

    settings = get_settings()
    resolved_level = (level or settings.log_level).upper()

    logging.setLogRecordFactory(_record_factory)
    logging.basicConfig(
        level=resolved_level,
        format="%(asctime)s | %(levelname)s | %(run_context)s | %(name)s | %(message)s",
        stream=sys.stderr,
    )
    _LOGGER_INITIALIZED = True


def get_logger(name: str) -> logging.Logger:
    """Return a configured logger for the requested module."""
    configure_logging()
    return logging.getLogger(name)
