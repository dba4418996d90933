"""
Error types and error handling utilities.
Implements the exception hierarchy, retry logic for file I/O, parameter
validation and the mapping from errors to CLI exit codes.
"""

import time
import random
import functools
import math
import numbers
from typing import Any, Callable, Dict, Optional, List, Tuple, Sequence
from src.utils.logging_config import get_logger

logger = get_logger(__name__)


class LomarError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1


class DimensionError(LomarError):
    """Shapes or sizes do not agree."""

    exit_code = 3


class NumericError(LomarError):
    """A NaN or Inf appeared where finite values are required."""

    exit_code = 4


class ContractError(LomarError):
    """A documented precondition of an operation was violated."""

    exit_code = 5


class IngestionError(LomarError):
    """An image source could not be read."""

    exit_code = 6


class ConfigError(LomarError):
    """Invalid run configuration; carries the offending key."""

    exit_code = 2

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class CheckpointError(LomarError):
    exit_code = 7


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class MeasurementError(LomarError):
    """Timing measurements are below the clock's resolution budget."""

    exit_code = 8


class ParameterError(LomarError):
    """Invalid argument to an operation (not a config key)."""

    exit_code = 9


class RetryConfig:
    """Configuration for retry logic."""

    def __init__(
        self,
        max_attempts: int = 3,
        base_delay: float = 0.1,
        max_delay: float = 2.0,
        exponential_base: float = 2.0,
        jitter: bool = True
    ):
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.exponential_base = exponential_base
        self.jitter = jitter


class ErrorHandler:
    """Centralized error handling with retry logic and exit-code mapping."""

    # Retries only make sense for file-system hiccups
    RETRY_CONFIGS = {
        'checkpoint_write': RetryConfig(max_attempts=3, base_delay=0.2, max_delay=2.0),
        'artifact_write': RetryConfig(max_attempts=2, base_delay=0.1, max_delay=1.0),
        'default': RetryConfig(max_attempts=2, base_delay=0.1, max_delay=1.0)
    }

    @staticmethod
    def with_retry(
        operation_type: str = 'default',
        retry_config: Optional[RetryConfig] = None,
        retry_on: Tuple[type, ...] = (OSError,),
    ):
        """
        Decorator for adding retry logic to I/O operations.

        Args:
            operation_type: Type of operation for default config
            retry_config: Custom retry configuration
            retry_on: Exception types that trigger a retry; anything else propagates at once
        """
        def decorator(func: Callable) -> Callable:
            @functools.wraps(func)
            def wrapper(*args, **kwargs):
                config = retry_config or ErrorHandler.RETRY_CONFIGS.get(
                    operation_type,
                    ErrorHandler.RETRY_CONFIGS['default']
                )

                last_exception = None

                for attempt in range(config.max_attempts):
                    try:
                        return func(*args, **kwargs)
                    except retry_on as e:
                        last_exception = e

                        if attempt == config.max_attempts - 1:
                            break

                        delay = min(
                            config.base_delay * (config.exponential_base ** attempt),
                            config.max_delay
                        )
                        if config.jitter:
                            delay *= (0.5 + random.random() * 0.5)

                        logger.warning(
                            f"⚠️ Attempt {attempt + 1}/{config.max_attempts} failed for {func.__name__}: {e}. "
                            f"Retrying in {delay:.2f}s..."
                        )
                        time.sleep(delay)

                logger.error(
                    f"❌ All {config.max_attempts} attempts failed for {func.__name__}: {last_exception}"
                )
                raise last_exception

            return wrapper
        return decorator

    @staticmethod
    def handle_cli_error(e: Exception, command: str, context: Dict[str, Any] = None) -> Tuple[int, str]:
        """
        Map an exception to an exit code and a one-line diagnostic.

        Args:
            e: Exception that occurred
            command: CLI command being run
            context: Additional context information

        Returns:
            (exit_code, diagnostic)
        """
        context = context or {}
        exit_code = e.exit_code if isinstance(e, LomarError) else 1
        first_line = str(e).splitlines()[0] if str(e) else type(e).__name__
        diagnostic = f"lomar {command}: {type(e).__name__}: {first_line}"

        logger.error(
            f"❌ {diagnostic}",
            extra={
                'command': command,
                'error_details': {
                    'type': type(e).__name__,
                    'message': str(e),
                    'exit_code': exit_code,
                    **context
                }
            },
            exc_info=not isinstance(e, LomarError)
        )
        return exit_code, diagnostic


class InputValidator:
    """Range checks shared by configs and operations."""

    @staticmethod
    def positive_int(name: str, value: Any, error: type = ParameterError) -> int:
        if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
            raise InputValidator._raise(error, name, f"must be a positive integer, got {value!r}")
        return int(value)

    @staticmethod
    def non_negative_int(name: str, value: Any, error: type = ParameterError) -> int:
        if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
            raise InputValidator._raise(error, name, f"must be a non-negative integer, got {value!r}")
        return int(value)

    @staticmethod
    def probability(name: str, value: Any, error: type = ParameterError) -> float:
        if not isinstance(value, (int, float)) or not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise InputValidator._raise(error, name, f"must lie in [0, 1], got {value!r}")
        return float(value)

    @staticmethod
    def positive_real(name: str, value: Any, error: type = ParameterError) -> float:
        if not isinstance(value, (int, float)) or not math.isfinite(value) or value <= 0:
            raise InputValidator._raise(error, name, f"must be a positive real, got {value!r}")
        return float(value)

    @staticmethod
    def non_negative_real(name: str, value: Any, error: type = ParameterError) -> float:
        if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
            raise InputValidator._raise(error, name, f"must be a non-negative real, got {value!r}")
        return float(value)

    @staticmethod
    def choice(name: str, value: Any, options: Sequence[Any], error: type = ParameterError) -> Any:
        if value not in options:
            raise InputValidator._raise(error, name, f"must be one of {list(options)}, got {value!r}")
        return value

    @staticmethod
    def _raise(error: type, name: str, message: str) -> LomarError:
        if issubclass(error, ConfigError):
            return error(name, message)
        return error(f"{name} {message}")


def with_checkpoint_retry(func):
    """Decorator for checkpoint writes with retry logic."""
    return ErrorHandler.with_retry('checkpoint_write')(func)


def with_artifact_retry(func):
    """Decorator for CSV/PNG artifact writes with retry logic."""
    return ErrorHandler.with_retry('artifact_write')(func)


def exit_codes() -> List[Tuple[str, int]]:
    """Exit codes by error class, for the CLI help text."""
    return [
        (cls.__name__, cls.exit_code)
        for cls in (ConfigError, DimensionError, NumericError, ContractError,
                    IngestionError, CheckpointError, MeasurementError, ParameterError)
    ]
