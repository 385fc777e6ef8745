"""
AugRL Bench - Logging Utility
Console and rotating-file logging for training runs and verification suites
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from config.settings import (
    LOGS_DIR,
    ENABLE_LOGGING,
    LOG_LEVEL,
    LOG_FORMAT,
    LOG_FILE_MAX_BYTES,
    LOG_FILE_BACKUP_COUNT
)

APP_LOG_FILE = LOGS_DIR / "app.log"
ERROR_LOG_FILE = LOGS_DIR / "error.log"
PERFORMANCE_LOG_FILE = LOGS_DIR / "performance.log"
RUNS_LOG_FILE = LOGS_DIR / "runs.log"

RUN_FORMAT = "%(asctime)s - RUN - %(message)s"


def _attach_file(logger: logging.Logger, path: Path, level: int, fmt: str = LOG_FORMAT) -> None:
    """Add a rotating handler for ``path`` unless the logger already writes there."""
    target = str(path.resolve())
    for existing in logger.handlers:
        if isinstance(existing, RotatingFileHandler) and existing.baseFilename == target:
            return
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(path, maxBytes=LOG_FILE_MAX_BYTES, backupCount=LOG_FILE_BACKUP_COUNT)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(fmt))
    logger.addHandler(handler)


def _describe(metadata: dict | None) -> str:
    if not metadata:
        return ""
    return " | " + ", ".join(f"{key}={value}" for key, value in metadata.items())


def setup_logger(name: str, log_level: str = LOG_LEVEL) -> logging.Logger:
    """
    Configure a named logger once

    Args:
        name: Logger name
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL; unknown names fall back to INFO

    Returns:
        The logger, writing to stderr and, when file logging is on, to app.log and error.log
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger

    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        level = logging.INFO
    logger.setLevel(level)
    logger.propagate = False

    # stdout is reserved for reports
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(level)
    stream.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(stream)

    if ENABLE_LOGGING:
        _attach_file(logger, APP_LOG_FILE, level)
        _attach_file(logger, ERROR_LOG_FILE, logging.ERROR)

    return logger


def get_logger(name: str) -> logging.Logger:
    """Module-level accessor, called with ``__name__``"""
    return setup_logger(name)


class _ChannelLogger:
    """A logger that additionally feeds one dedicated log file"""

    channel = ""
    path: Path = APP_LOG_FILE
    fmt = LOG_FORMAT

    def __init__(self):
        self.logger = setup_logger(self.channel)
        if ENABLE_LOGGING:
            _attach_file(self.logger, self.path, logging.INFO, self.fmt)


class PerformanceLogger(_ChannelLogger):
    """Wall-clock costs of training phases and verification suites"""

    channel = "performance"
    path = PERFORMANCE_LOG_FILE

    def log_operation(self, operation: str, duration: float, metadata: dict = None):
        self.logger.info(f"{operation} took {duration:.4f}s{_describe(metadata)}")

    def log_training_phase(self, phase: str, step: int, updates: int, duration: float):
        rate = updates / duration if duration > 0 else float("inf")
        self.logger.info(
            f"phase={phase} step={step} updates={updates} "
            f"elapsed={duration:.4f}s ({rate:.1f} updates/s)"
        )


class RunAuditLogger(_ChannelLogger):
    """Run lifecycle: start, finish, failure and checkpoint writes"""

    channel = "runs"
    path = RUNS_LOG_FILE
    fmt = RUN_FORMAT

    def log_run_event(self, run_id: str, event: str, details: str = "", metadata: dict = None):
        suffix = f" - {details}" if details else ""
        self.logger.info(f"[{run_id}] {event}{suffix}{_describe(metadata)}")

    def log_checkpoint(self, run_id: str, path: str, step: int, tensors: int):
        self.logger.info(f"[{run_id}] checkpoint step={step} tensors={tensors} -> {path}")


performance_logger = PerformanceLogger()
run_audit_logger = RunAuditLogger()


def log_performance(operation: str, duration: float, metadata: dict = None):
    performance_logger.log_operation(operation, duration, metadata)


def log_run_event(run_id: str, event: str, details: str = "", metadata: dict = None):
    run_audit_logger.log_run_event(run_id, event, details, metadata)
