"""Structured logging configuration for levyperron runs."""

import logging
import sys

import structlog

# logging.getLevelNamesMapping() is Python >= 3.11; it returns a copy of _nameToLevel.
_level_names = getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))


def setup_logging(level: str = "INFO", json: bool = False) -> None:
    """Configure structlog; JSON lines for batch runs, console rendering otherwise.

    Log records go to stderr so CSV/JSON artifacts written to stdout or disk
    are never interleaved with diagnostics.
    """
    renderer = structlog.processors.JSONRenderer() if json else structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(_level_names()[level.upper()]),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
