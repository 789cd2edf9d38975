"""
Logging configuration
Console and timestamped file handlers with the project-wide message format
"""

import datetime
import logging
import os
from typing import Optional

from config.settings import settings

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: Optional[str] = None, log_to_file: bool = True, logs_dir: Optional[str] = None) -> Optional[str]:
    """
    Configure the root logger once per process.

    Args:
        level: Level name such as "INFO" or "DEBUG" (defaults to settings.LOG_LEVEL)
        log_to_file: Also write to a timestamped file under logs_dir
        logs_dir: Directory for log files (defaults to settings.LOGS_DIR)

    Returns:
        Path of the log file, or None when logging only to the console
    """
    level_name = (level or settings.LOG_LEVEL).upper()
    handlers = [logging.StreamHandler()]
    log_filename = None

    if log_to_file:
        logs_dir = logs_dir or settings.LOGS_DIR
        os.makedirs(logs_dir, exist_ok=True)
        log_filename = os.path.join(
            logs_dir, f"killed_diffusion_{datetime.datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        )
        handlers.append(logging.FileHandler(log_filename))

    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    return log_filename
