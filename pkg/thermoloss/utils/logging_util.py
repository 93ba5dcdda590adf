"""
Logging utility module for the thermoloss toolkit.
"""
import os
import logging
import sys
from datetime import datetime

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def resolve_log_level(verbose=False):
    """
    Pick the log level from the command line and the environment.

    Args:
        verbose (bool): Force DEBUG regardless of the environment

    Returns:
        int: Logging level
    """
    if verbose:
        return logging.DEBUG
    name = os.environ.get("THERMOLOSS_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    # getLevelName returns a string for unknown names
    return level if isinstance(level, int) else logging.INFO


def setup_logging(log_level=logging.INFO, log_to_file=False, log_dir="logs", stream=None):
    """
    Set up logging configuration for the toolkit.

    Args:
        log_level (int): Logging level (e.g., logging.INFO, logging.DEBUG)
        log_to_file (bool): Whether to log to a file in addition to console
        log_dir (str): Directory receiving the timestamped log file
        stream (file-like, optional): Console stream, stdout by default

    Returns:
        logging.Logger: Configured logger
    """
    if log_to_file and not os.path.exists(log_dir):
        os.makedirs(log_dir)

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)

    # Clear any existing handlers
    for handler in list(root_logger.handlers):
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(stream or sys.stdout)
    console_handler.setLevel(log_level)

    formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if log_to_file:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = os.path.join(log_dir, f"thermoloss_{timestamp}.log")

        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(log_level)
        file_handler.setFormatter(formatter)

        root_logger.addHandler(file_handler)
        root_logger.info(f"Logging to file: {log_file}")

    logger = logging.getLogger("thermoloss")
    logger.debug("Logging initialized")

    return logger
