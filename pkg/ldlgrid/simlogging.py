"""
Loggers for simulation runs.

One package logger prints INFO and above to stdout and, once the output directory exists,
writes everything to the run's simulation_log.txt. Records emitted before that are held in a
memory buffer. Batch cells log through child loggers that tag each record with the scenario name.
"""
import logging
import sys
from logging.handlers import MemoryHandler
from typing import List, Optional

NOPRINTCRITICAL = logging.CRITICAL + 1
NOPRINTERROR = logging.ERROR + 1
NOPRINTWARNING = logging.WARNING + 1
NOPRINTINFO = logging.INFO + 1
NOPRINTDEBUG = logging.DEBUG + 1

for _level, _name in (
    (NOPRINTCRITICAL, "NO_PRINT_CRITICAL"),
    (NOPRINTERROR, "NO_PRINT_ERROR"),
    (NOPRINTWARNING, "NO_PRINT_WARNING"),
    (NOPRINTINFO, "NO_PRINT_INFO"),
    (NOPRINTDEBUG, "NO_PRINT_DEBUG"),
):
    logging.addLevelName(_level, _name)

DEFAULT_LOGGER_NAME = "ldlgrid"

STDOUT_MESSAGE_FORMAT = "%(asctime)s - %(message)s"
FILE_MESSAGE_FORMAT = "%(levelname)8s -- %(asctime)s - %(module)s.%(funcName)s - %(message)s"
SCENARIO_MESSAGE_FORMAT = (
    "%(levelname)8s -- %(asctime)s - %(module)s.%(funcName)s - {} - %(message)s"
)

stdout_formatter = logging.Formatter(STDOUT_MESSAGE_FORMAT)
file_formatter = logging.Formatter(FILE_MESSAGE_FORMAT)


def _printable(record: logging.LogRecord) -> bool:
    # NOPRINT levels end in 1
    return record.levelno % 10 != 1


def create_stdout_handler(level=logging.INFO) -> logging.Handler:
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)
    handler.setFormatter(stdout_formatter)
    handler.addFilter(_printable)
    return handler


def get_logger(name: Optional[str] = DEFAULT_LOGGER_NAME, stdout_printer=True) -> logging.Logger:
    """
    Returns the named logger, configuring it on first use.
    :param name: logger name, an existing logger with handlers is returned as is
    :param stdout_printer: attach the stdout handler
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    logger.setLevel(logging.DEBUG)
    if stdout_printer:
        logger.addHandler(create_stdout_handler())
    return logger


def _file_targets(handlers) -> List[logging.FileHandler]:
    seen, files = set(), []
    for handler in handlers:
        if isinstance(handler, logging.FileHandler) and handler.baseFilename not in seen:
            seen.add(handler.baseFilename)
            files.append(handler)
    return files


def get_scenario_logger(parent: logging.Logger, scenario_name: str, stdout_printer=True) -> logging.Logger:
    """
    Child logger for one scenario of a batch. Its records go to the parent's log files with the
    scenario name in every line. Handlers are rebuilt on each call so a reused scenario name
    follows the parent's current files.
    """
    logger = logging.getLogger(f"{parent.name}.{scenario_name}")
    clean_up_logger(logger)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    formatter = logging.Formatter(SCENARIO_MESSAGE_FORMAT.format(scenario_name))
    for source in _file_targets(parent.handlers):
        handler = logging.FileHandler(source.baseFilename)
        handler.setLevel(source.level)
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    if stdout_printer:
        logger.addHandler(create_stdout_handler())
    return logger


def add_general_file_handler(logger: logging.Logger, file_path: str):
    """Appends every record of the logger to file_path"""
    handler = logging.FileHandler(file_path)
    handler.setFormatter(file_formatter)
    logger.addHandler(handler)
    return handler


def add_buffer_handler(logger: logging.Logger, buffer_size: int = 1000, flush_level: int = 1000):
    """
    Holds records in memory until flush_buffer_handler names the log file.
    :param buffer_size: records kept before the oldest are dropped into the target, if any
    :param flush_level: level that forces an early flush, unreachable by default
    """
    handler = MemoryHandler(buffer_size, flushLevel=flush_level)
    handler.setFormatter(file_formatter)
    logger.addHandler(handler)


def flush_buffer_handler(logger: logging.Logger, file_path: str):
    """Writes the buffered records to file_path and logs there from now on"""
    target = add_general_file_handler(logger, file_path)
    for handler in [h for h in logger.handlers if isinstance(h, MemoryHandler)]:
        handler.setTarget(target)
        handler.flush()
        handler.close()
        logger.removeHandler(handler)


def clean_up_logger(logger: logging.Logger):
    for handler in logger.handlers[::-1]:
        handler.close()
        logger.removeHandler(handler)


def set_stdout_level(logger: logging.Logger, level: int):
    for handler in logger.handlers:
        if type(handler) is logging.StreamHandler:
            handler.setLevel(level)
