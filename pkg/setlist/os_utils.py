import os
from pathlib import Path

LOGS_DIR = "logs"
LOG_FILES = ["setlist.log", "runs.log"]


def ensure_log_files_exist(logs_dir: str = LOGS_DIR):
    """
    Ensures that the logs directory and the log files referenced by the
    logging configuration exist. Creates them if they don't exist.
    """
    if not os.path.exists(logs_dir):
        os.makedirs(logs_dir)

    for log_file in LOG_FILES:
        log_path = os.path.join(logs_dir, log_file)
        if not os.path.exists(log_path):
            open(log_path, 'w').close()


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
