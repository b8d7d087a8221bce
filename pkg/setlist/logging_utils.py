import logging
import logging.config
import os
from pathlib import Path

from setlist.os_utils import ensure_log_files_exist

SETLIST_LOGGER_NAME = "setlist"
RUNS_LOGGER_NAME = "setlist_runs"

DEFAULT_LOGGING_CONFIG = Path(__file__).resolve().parent.parent / "default-logging-config.ini"


def get_setlist_logger():
    return logging.getLogger(SETLIST_LOGGER_NAME)


def get_runs_logger():
    return logging.getLogger(RUNS_LOGGER_NAME)


def setup_logging() -> None:
    """
    Configures the ``setlist`` and ``setlist_runs`` loggers from the ini file named by
    ``SETLIST_LOGGING_CONFIG`` (default: ``default-logging-config.ini`` at the repository root).

    Falls back to ``logging.basicConfig`` when the file is missing.
    """
    config_path = Path(os.environ.get("SETLIST_LOGGING_CONFIG", DEFAULT_LOGGING_CONFIG))
    if not config_path.is_file():
        logging.basicConfig(level=logging.INFO)
        get_setlist_logger().warning(f"Logging config {config_path} not found, using basicConfig")
        return

    # Ensure log files exist
    ensure_log_files_exist()
    logging.config.fileConfig(config_path, disable_existing_loggers=False)
