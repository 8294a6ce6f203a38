"""Provide centralized logging for combiverse runs.

This module configures project-wide logging so every stage of a run
(decomposition, reconstruction, initialization, combination, export)
reports to the console and to a persistent log file under the run
directory. It also owns the metrics channel: one JSON object per
optimizer iteration, written to its own append-only file.

Module Information:
    - Filename: utils_logger.py
    - Module: utils_logger
    - Location: src/combiverse/

Key Concepts:
    - Centralized logging configuration with Loguru
    - Log levels (DEBUG, INFO, WARNING, ERROR)
    - File-based log persistence with rotation and retention
    - A separate structured metrics channel (``extra["channel"] == "metrics"``)
"""

from collections.abc import Iterator, Mapping
import contextlib
import json
import pathlib
import sys
from typing import Any

from loguru import logger

METRICS_CHANNEL = "metrics"
LOG_FORMAT = "{time:YYYY-MM-DD HH:mm}:{level:<7} AT {file}:{line}: {message}"

_is_configured: bool = False
_log_file_path: pathlib.Path | None = None


def _project_root(start: pathlib.Path | None = None) -> pathlib.Path:
    """Find the project root by walking up until we see a pyproject.toml or .git.

    Falls back to the directory containing this file.
    """
    here = (start or pathlib.Path(__file__)).resolve()
    for p in [here, *here.parents]:
        if (p / "pyproject.toml").exists() or (p / ".git").exists():
            return p
    return here.parent


project_root = _project_root()


def _not_metrics(record: Any) -> bool:
    return record["extra"].get("channel") != METRICS_CHANNEL


def _only_metrics(record: Any) -> bool:
    return record["extra"].get("channel") == METRICS_CHANNEL


def get_log_file_path() -> pathlib.Path:
    """Return the path to the active log file, or the default path if not initialized."""
    if _log_file_path is not None:
        return _log_file_path
    return project_root / "combiverse.log"


def init_logger(
    level: str = "INFO",
    *,
    log_dir: str | pathlib.Path = project_root,
    log_file_name: str = "combiverse.log",
) -> pathlib.Path:
    """Initialize the logger and return the log file path.

    Ensures the log folder exists and configures a stderr sink plus a
    rotating file sink. Both sinks skip metrics records.

    Args:
        level (str): Logging level (e.g., "INFO", "DEBUG").
        log_dir: Directory where the log file will be written.
        log_file_name: File name for the log file.

    Returns:
        pathlib.Path: The resolved path to the log file.
    """
    global _is_configured, _log_file_path
    if _is_configured:
        return pathlib.Path(log_dir) / log_file_name

    log_folder = pathlib.Path(log_dir).expanduser().resolve()
    log_folder.mkdir(parents=True, exist_ok=True)
    log_file = log_folder / log_file_name

    try:
        logger.remove()
        logger.add(sys.stderr, level=level, format=LOG_FORMAT, filter=_not_metrics)
        logger.add(
            log_file,
            level=level,
            enqueue=True,
            backtrace=True,
            diagnose=False,
            rotation="10 MB",
            retention="7 days",
            encoding="utf-8",
            format=LOG_FORMAT,
            filter=_not_metrics,
        )
        logger.info(f"Logging to file: {log_file}")
        _is_configured = True
        _log_file_path = log_file
    except Exception as e:
        logger.error(f"Error configuring logger to write to file: {e}")

    return log_file


# -------------------------------------------------------------------
# Metrics channel
# -------------------------------------------------------------------

metrics_logger = logger.bind(channel=METRICS_CHANNEL)


@contextlib.contextmanager
def metrics_sink(path: str | pathlib.Path) -> Iterator[pathlib.Path]:
    """Attach a JSON-lines sink for the metrics channel while the block runs.

    The sink writes synchronously and has no timestamps, so two runs with
    the same seed produce byte-identical files.
    """
    target = pathlib.Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handler_id = logger.add(
        target,
        level="INFO",
        format="{message}",
        filter=_only_metrics,
        encoding="utf-8",
        mode="a",
    )
    try:
        yield target
    finally:
        logger.remove(handler_id)


def log_metrics(record: Mapping[str, Any]) -> None:
    """Emit one metrics record as a sorted-key JSON object."""
    metrics_logger.info(json.dumps(dict(record), sort_keys=True))


def read_metrics(path: str | pathlib.Path) -> list[dict[str, Any]]:
    """Load every record from a metrics JSON-lines file."""
    lines = pathlib.Path(path).read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if line.strip()]


__all__ = [
    "LOG_FORMAT",
    "METRICS_CHANNEL",
    "get_log_file_path",
    "init_logger",
    "log_metrics",
    "logger",
    "metrics_sink",
    "read_metrics",
]
