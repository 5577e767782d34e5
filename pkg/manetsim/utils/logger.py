"""
Structured logging setup for the MANET simulator.

Log lines go to stderr as ``[time][logger][LEVEL] message key=value ...``;
stdout is left to result CSV. The per-event protocol record is the trace,
not the log.
"""

import logging
import sys
from datetime import datetime
from typing import Any

LEVEL_COLORS = {
    logging.DEBUG: "\033[90m",
    logging.INFO: "\033[36m",
    logging.WARNING: "\033[33m",
    logging.ERROR: "\033[31m",
    logging.CRITICAL: "\033[35m",
}
RESET = "\033[0m"
QUIET_LIBRARIES = ("asyncio", "stageflow")


def format_fields(fields: dict[str, Any]) -> str:
    """``key=value`` pairs in key order; floats to microseconds."""
    parts = []
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, float):
            value = f"{value:.6f}"
        parts.append(f"{key}={value}")
    return " ".join(parts)


class StructuredFormatter(logging.Formatter):
    """Formatter that appends a record's context fields to the message."""

    def __init__(self, use_colors: bool = True):
        super().__init__()
        self.use_colors = use_colors and sys.stderr.isatty()

    def format(self, record: logging.LogRecord) -> str:
        stamp = datetime.now().isoformat(timespec="milliseconds")
        head = f"[{stamp}][{record.name}][{record.levelname.ljust(5)}]"
        body = record.getMessage()
        fields = getattr(record, "fields", None)
        if fields:
            body = f"{body} {format_fields(fields)}"
        if record.exc_info:
            body = f"{body}\n{self.formatException(record.exc_info)}"
        if self.use_colors:
            head = f"{LEVEL_COLORS.get(record.levelno, '')}{head}{RESET}"
        return f"{head} {body}"


class ContextLogger(logging.LoggerAdapter):
    """Adapter that merges its fixed context with each call's ``extra``."""

    def process(self, msg: str, kwargs: dict) -> tuple[str, dict]:
        fields = {**(self.extra or {}), **(kwargs.get("extra") or {})}
        kwargs["extra"] = {"fields": fields}
        return msg, kwargs


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure logging for the application."""
    if quiet:
        level = logging.WARNING
    else:
        level = logging.DEBUG if verbose else logging.INFO

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(StructuredFormatter())

    root = logging.getLogger()
    root.setLevel(level)
    root.handlers = [handler]

    for name in QUIET_LIBRARIES:
        logging.getLogger(name).setLevel(logging.WARNING)


def get_logger(name: str, **context: Any) -> ContextLogger:
    """Logger under the ``manetsim`` namespace carrying ``context`` on every line."""
    return ContextLogger(logging.getLogger(f"manetsim.{name}"), context)
