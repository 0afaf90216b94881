"""
Coarse Guidance Toolkit - Logging Configuration
Structured logging to stderr; every record carries the active run context
(subcommand and config hash) so that log lines can be matched to result files.
"""

import logging
import json
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, Optional
from config.settings import settings

ROOT_LOGGER_NAME = 'coarse_guidance'

_run_context: ContextVar[Dict[str, Any]] = ContextVar('run_context', default={})


@contextmanager
def run_context(**fields: Any) -> Iterator[None]:
    """Attach fields to every record logged inside the block"""
    token = _run_context.set({**_run_context.get(), **fields})
    try:
        yield
    finally:
        _run_context.reset(token)


def _record_fields(record: logging.LogRecord) -> Dict[str, Any]:
    return {**_run_context.get(), **getattr(record, 'extra_fields', {})}


class StructuredFormatter(logging.Formatter):
    """One JSON object per record"""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            'timestamp': datetime.fromtimestamp(record.created, timezone.utc).isoformat().replace('+00:00', 'Z'),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'function': record.funcName,
        }
        entry.update(_record_fields(record))

        if record.exc_info:
            entry['exception'] = self.formatException(record.exc_info)

        if settings.debug_mode:
            entry['source'] = f"{record.pathname}:{record.lineno}"
            entry['thread'] = record.threadName

        return json.dumps(entry, default=str)


class PlainFormatter(logging.Formatter):
    """Single-line text with trailing key=value context"""

    def __init__(self):
        super().__init__(fmt='%(asctime)s %(levelname)-7s %(name)s: %(message)s', datefmt='%H:%M:%S')

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        fields = _record_fields(record)
        if fields:
            line += ' [' + ' '.join(f"{key}={value}" for key, value in fields.items()) + ']'
        return line


def setup_logging(
    level: Optional[str] = None,
    format_type: Optional[str] = None,
    logger_name: Optional[str] = None
) -> logging.Logger:
    """
    Configure the toolkit logger

    Logs go to stderr; stdout is reserved for command results.

    Args:
        level: DEBUG, INFO, WARNING, ERROR or CRITICAL (defaults to settings.log_level)
        format_type: 'json' or 'plain' (defaults to settings.log_format)
        logger_name: Logger to configure (defaults to the toolkit root)

    Returns:
        The configured logger
    """
    logger = logging.getLogger(logger_name or ROOT_LOGGER_NAME)
    logger.handlers.clear()

    numeric_level = getattr(logging, (level or settings.log_level).upper(), logging.INFO)
    logger.setLevel(numeric_level)

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(numeric_level)
    json_output = (format_type or settings.log_format).lower() == 'json'
    handler.setFormatter(StructuredFormatter() if json_output else PlainFormatter())

    logger.addHandler(handler)
    logger.propagate = False
    return logger


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def log_with_context(logger: logging.Logger, level: int, message: str, **context: Any) -> None:
    """Log ``message`` with ``context`` as structured fields"""
    logger.log(level, message, extra={'extra_fields': context})


def log_analysis_operation(
    logger: logging.Logger,
    module: str,
    operation: str,
    status: str,
    duration: Optional[float] = None,
    **context: Any
) -> None:
    """
    Log the start, end or failure of a toolkit operation

    Args:
        logger: Logger instance
        module: Toolkit module (ring_model, simulator, lmi_cert, ...)
        operation: Operation name
        status: started, completed or failed
        duration: Wall time in seconds
        **context: Additional fields
    """
    fields = {'module': module, 'operation': operation, 'status': status, **context}
    if duration is not None:
        fields['duration_seconds'] = round(duration, 3)

    level = logging.ERROR if status == 'failed' else logging.INFO
    log_with_context(logger, level, f"{module}.{operation} {status}", **fields)


def log_solver_call(
    logger: logging.Logger,
    solver: str,
    problem: str,
    status: str,
    duration: Optional[float] = None,
    attempt: Optional[int] = None,
    **context: Any
) -> None:
    """
    Log one conic solver attempt

    Definite outcomes go to DEBUG; solver errors and inaccurate or unknown
    statuses go to WARNING.
    """
    fields = {'solver': solver, 'problem': problem, 'solver_status': status, **context}
    if duration is not None:
        fields['duration_seconds'] = round(duration, 3)
    if attempt is not None:
        fields['attempt'] = attempt

    level = logging.DEBUG if status in ('optimal', 'infeasible') else logging.WARNING
    log_with_context(logger, level, f"{solver} on {problem}: {status}", **fields)


app_logger = setup_logging()

model_logger = get_logger('ring_model')
sim_logger = get_logger('simulator')
cert_logger = get_logger('certify')
synth_logger = get_logger('synthesis')
search_logger = get_logger('holdlimit_search')
cli_logger = get_logger('cli')
