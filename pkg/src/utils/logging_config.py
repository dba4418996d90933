"""
Logging configuration for the local masked reconstruction toolkit.
Provides structured logging with context and performance metrics.
"""

import logging
import logging.handlers
import json
import os
import time
import functools
import threading
from datetime import datetime, timezone
from typing import Dict, Any, Optional
from contextlib import contextmanager


# Extra attributes copied into the JSON record when present
_CONTEXT_FIELDS = (
    'operation', 'duration_ms', 'step', 'command', 'error_details',
    'metrics_summary', 'config', 'report',
)


class StructuredFormatter(logging.Formatter):
    """
    Custom formatter that outputs structured JSON logs with context.
    """

    def format(self, record):
        """Format log record as structured JSON."""
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno
        }

        for field_name in _CONTEXT_FIELDS:
            if hasattr(record, field_name):
                log_entry[field_name] = getattr(record, field_name)

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        return json.dumps(log_entry, ensure_ascii=False, default=str)


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None):
    """
    Setup logging for a run.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Path to the JSON log file; console only when None
    """
    logger = logging.getLogger()
    logger.setLevel(getattr(logging, log_level.upper()))

    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler):
            handler.close()
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    ))
    console_handler.setLevel(getattr(logging, log_level.upper()))

    # Windows consoles
    if hasattr(console_handler.stream, 'reconfigure'):
        try:
            console_handler.stream.reconfigure(encoding='utf-8')
        except (ValueError, OSError):
            pass

    logger.addHandler(console_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding="utf-8"
        )
        file_handler.setFormatter(StructuredFormatter())
        file_handler.setLevel(logging.DEBUG)
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger instance with the specified name.

    Args:
        name: Logger name (usually __name__)

    Returns:
        Logger instance
    """
    return logging.getLogger(name)


def log_operation(operation_name: str):
    """
    Decorator to log function operations with timing and context.

    Args:
        operation_name: Name of the operation being logged
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            logger = get_logger(func.__module__)
            start_time = time.perf_counter()
            extra = {'operation': operation_name}
            logger.debug(f"🚀 Starting operation: {operation_name}", extra=extra)

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
                extra.update({
                    'duration_ms': duration_ms,
                    'error_details': {
                        'type': type(e).__name__,
                        'message': str(e),
                    }
                })
                logger.error(f"❌ Operation failed: {operation_name} after {duration_ms}ms - {e}", extra=extra)
                metrics_collector.record_operation(operation_name, duration_ms, success=False)
                raise

            duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
            extra['duration_ms'] = duration_ms
            logger.info(f"✅ Operation finished: {operation_name} in {duration_ms}ms", extra=extra)
            metrics_collector.record_operation(operation_name, duration_ms, success=True)
            return result

        return wrapper
    return decorator


@contextmanager
def performance_monitor(operation_name: str, slow_threshold_ms: float = 5000.0, **context):
    """
    Context manager for monitoring operation performance.

    Args:
        operation_name: Name of the operation
        slow_threshold_ms: Durations above this are logged as warnings
        **context: Additional context information
    """
    logger = get_logger('performance')
    start_time = time.perf_counter()

    try:
        yield
    except Exception as e:
        duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
        extra = {
            'operation': operation_name,
            'duration_ms': duration_ms,
            'error_details': {
                'type': type(e).__name__,
                'message': str(e),
                **context
            },
        }
        logger.error(f"💥 Monitored operation failed: {operation_name} after {duration_ms}ms", extra=extra)
        raise

    duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
    extra = {'operation': operation_name, 'duration_ms': duration_ms}
    extra.update({k: v for k, v in context.items() if k in _CONTEXT_FIELDS})

    if duration_ms > slow_threshold_ms:
        logger.warning(f"⚠️ Slow operation: {operation_name} took {duration_ms}ms", extra=extra)
    else:
        logger.debug(f"⏱️ Performance: {operation_name} - {duration_ms}ms", extra=extra)


class MetricsCollector:
    """
    Simple metrics collector for basic performance monitoring.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.metrics = self._empty()
        self.logger = get_logger('metrics')

    @staticmethod
    def _empty() -> Dict[str, Any]:
        return {
            'operations_count': {},
            'operation_durations': {},
            'error_counts': {},
            'last_reset': datetime.now()
        }

    def record_operation(self, operation: str, duration_ms: float, success: bool = True):
        """Record an operation metric."""
        with self._lock:
            counts = self.metrics['operations_count']
            counts[operation] = counts.get(operation, 0) + 1
            self.metrics['operation_durations'].setdefault(operation, []).append(duration_ms)
            if not success:
                errors = self.metrics['error_counts']
                errors[operation] = errors.get(operation, 0) + 1

    def get_metrics_summary(self) -> Dict[str, Any]:
        """Get summary of collected metrics."""
        with self._lock:
            summary = {
                'collection_period': {
                    'start': self.metrics['last_reset'].isoformat(),
                    'end': datetime.now().isoformat()
                },
                'operations': {}
            }

            for operation, count in self.metrics['operations_count'].items():
                durations = self.metrics['operation_durations'].get(operation, [])
                errors = self.metrics['error_counts'].get(operation, 0)

                summary['operations'][operation] = {
                    'total_count': count,
                    'error_count': errors,
                    'success_rate': (count - errors) / count if count > 0 else 0,
                    'avg_duration_ms': sum(durations) / len(durations) if durations else 0,
                    'max_duration_ms': max(durations) if durations else 0,
                    'min_duration_ms': min(durations) if durations else 0
                }

        return summary

    def log_metrics_summary(self):
        """Log current metrics summary."""
        summary = self.get_metrics_summary()
        self.logger.info("📊 Performance metrics summary", extra={'metrics_summary': summary})

    def reset_metrics(self):
        """Reset all collected metrics."""
        with self._lock:
            self.metrics = self._empty()
        self.logger.debug("🔄 Metrics reset")


# Global metrics collector instance
metrics_collector = MetricsCollector()
