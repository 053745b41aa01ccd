# polaron_qrt/logging_config.py
import os
import sys
import logging
import traceback
from contextlib import contextmanager
from datetime import datetime, timezone
from functools import wraps
from logging.handlers import RotatingFileHandler, TimedRotatingFileHandler
from typing import Any, Dict, List, Optional

import ujson

RUN_LOGGER = 'polaron_qrt.runs'
NUMERICS_LOGGER = 'polaron_qrt.numerics'
PACKAGE_LOGGER = 'polaron_qrt'


class CustomFormatter(logging.Formatter):
    """Custom formatter with color coding for console output"""

    COLORS = {
        logging.DEBUG: '\033[36m',     # Cyan
        logging.INFO: '\033[32m',      # Green
        logging.WARNING: '\033[33m',   # Yellow
        logging.ERROR: '\033[31m',     # Red
        logging.CRITICAL: '\033[35m',  # Magenta
    }
    RESET = '\033[0m'

    def format(self, record):
        if hasattr(record, 'scenario'):
            record.msg = f"[{record.scenario}] {record.msg}"

        log_color = self.COLORS.get(record.levelno, '')
        levelname = record.levelname
        record.levelname = f"{log_color}{levelname}{self.RESET}"
        try:
            return super().format(record)
        finally:
            record.levelname = levelname


class StructuredFormatter(logging.Formatter):
    """JSON formatter for structured logging"""

    EXTRA_FIELDS = ('scenario', 'stage', 'event', 'details', 'duration_seconds', 'success', 'error', 'config_hash')

    def format(self, record):
        log_record = {
            'timestamp': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
            'message': record.getMessage(),
            'thread': record.thread,
            'process': record.process,
        }

        for key in self.EXTRA_FIELDS:
            if hasattr(record, key):
                log_record[key] = getattr(record, key)

        if record.exc_info:
            log_record['exception'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': traceback.format_exception(*record.exc_info),
            }

        return ujson.dumps(log_record, default=str)


def _file_handler(path: str, formatter: logging.Formatter, level: int, max_bytes: int, backups: int) -> logging.Handler:
    handler = RotatingFileHandler(path, maxBytes=max_bytes, backupCount=backups, encoding='utf-8')
    handler.setFormatter(formatter)
    handler.setLevel(level)
    return handler


def setup_logging(log_level=logging.INFO, enable_json: bool = False, log_dir: Optional[str] = None,
                  console: bool = True) -> logging.Logger:
    """
    Configure package logging

    Args:
        log_level: Logging level (default: INFO)
        enable_json: Enable JSON structured logging for the application log (default: False)
        log_dir: Directory for log files; None disables file logging
        console: Attach the coloured stderr handler
    """
    if isinstance(log_level, str):
        log_level = getattr(logging, log_level.upper(), logging.INFO)

    console_formatter = CustomFormatter(
        '[%(asctime)s] %(levelname)s in %(module)s.%(funcName)s:%(lineno)d: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    file_formatter = logging.Formatter(
        '[%(asctime)s] [%(levelname)s] [%(name)s] [%(module)s.%(funcName)s:%(lineno)d] %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    json_formatter = StructuredFormatter()

    package_logger = logging.getLogger(PACKAGE_LOGGER)
    run_logger = logging.getLogger(RUN_LOGGER)
    numerics_logger = logging.getLogger(NUMERICS_LOGGER)
    for lg in (package_logger, run_logger, numerics_logger):
        lg.handlers.clear()

    package_logger.setLevel(log_level)
    run_logger.setLevel(logging.INFO)
    numerics_logger.setLevel(logging.INFO)

    if console:
        # stderr keeps stdout clean for command output
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(console_formatter)
        console_handler.setLevel(log_level)
        package_logger.addHandler(console_handler)

    if log_dir:
        os.makedirs(log_dir, mode=0o755, exist_ok=True)

        app_handler = TimedRotatingFileHandler(
            os.path.join(log_dir, 'application.log'),
            when='midnight',
            interval=1,
            backupCount=30,
            encoding='utf-8'
        )
        app_handler.setFormatter(json_formatter if enable_json else file_formatter)
        app_handler.setLevel(log_level)
        package_logger.addHandler(app_handler)

        package_logger.addHandler(_file_handler(
            os.path.join(log_dir, 'errors.log'), file_formatter, logging.ERROR,
            max_bytes=52428800, backups=10))  # 50MB

        run_logger.addHandler(_file_handler(
            os.path.join(log_dir, 'runs.log'), json_formatter, logging.INFO,
            max_bytes=20971520, backups=5))  # 20MB

        numerics_logger.addHandler(_file_handler(
            os.path.join(log_dir, 'numerics.log'), json_formatter, logging.INFO,
            max_bytes=10485760, backups=5))  # 10MB

    # run and numerics records also reach the console through the package logger
    run_logger.propagate = True
    numerics_logger.propagate = True
    package_logger.propagate = False

    package_logger.debug('Logging initialized')
    package_logger.debug(f'Log directory: {log_dir}')
    package_logger.debug(f'Log level: {logging.getLevelName(log_level)}')
    package_logger.debug(f'JSON logging: {enable_json}')

    return package_logger


def log_run(func):
    """Decorator to log duration and outcome of a scenario or numerical stage"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        logger = logging.getLogger(RUN_LOGGER)
        start_time = datetime.now()

        try:
            result = func(*args, **kwargs)
            duration = (datetime.now() - start_time).total_seconds()

            logger.info(f'{func.__name__} completed in {duration:.2f}s', extra={
                'stage': func.__name__,
                'duration_seconds': duration,
                'success': True
            })

            return result

        except Exception as e:
            duration = (datetime.now() - start_time).total_seconds()

            logger.error(f'{func.__name__} failed', extra={
                'stage': func.__name__,
                'duration_seconds': duration,
                'error': str(e),
                'success': False
            }, exc_info=True)

            raise

    return wrapper


class EventCollector(logging.Handler):
    """Keeps numerical events in memory so a run can list them in its manifest"""

    def __init__(self):
        super().__init__(level=logging.INFO)
        self.events: List[Dict[str, Any]] = []

    def emit(self, record):
        self.events.append({
            'event': getattr(record, 'event', record.getMessage()),
            'level': record.levelname,
            'details': getattr(record, 'details', {}),
        })


@contextmanager
def capture_numerical_events():
    collector = EventCollector()
    logger = logging.getLogger(NUMERICS_LOGGER)
    if logger.level == logging.NOTSET or logger.level > logging.INFO:
        logger.setLevel(logging.INFO)
    logger.addHandler(collector)
    try:
        yield collector.events
    finally:
        logger.removeHandler(collector)


def log_numerical_event(event: str, details: Optional[Dict[str, Any]] = None, level: int = logging.WARNING):
    """Record a numerical warning (truncation, saturation, positivity, ...)"""
    logger = logging.getLogger(NUMERICS_LOGGER)

    logger.log(level, f'Numerical event: {event}', extra={
        'event': event,
        'details': details or {},
    })
