"""
Retry logic with exponential backoff for transient file-system errors
while writing artifacts.
"""

import errno
import logging

from tenacity import (
    retry,
    stop_after_attempt,
    wait_exponential,
    retry_if_exception_type,
    before_sleep_log,
)

from config.settings import settings

logger = logging.getLogger(__name__)

_TRANSIENT_ERRNOS = {errno.EAGAIN, errno.EBUSY, errno.EINTR, errno.ETIMEDOUT}


class TransientIOError(OSError):
    """OSError that is expected to succeed when retried."""
    pass


def create_retry_decorator(max_attempts: int = 3, min_wait: int = 1, max_wait: int = 10):
    """
    Create a retry decorator with exponential backoff.

    Args:
        max_attempts: Maximum number of attempts
        min_wait: Minimum wait time in seconds
        max_wait: Maximum wait time in seconds

    Returns:
        Retry decorator that only retries TransientIOError
    """
    return retry(
        stop=stop_after_attempt(max_attempts),
        wait=wait_exponential(multiplier=1, min=min_wait, max=max_wait),
        retry=retry_if_exception_type(TransientIOError),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    )


# Default retry decorator for artifact writes
retry_with_backoff = create_retry_decorator(
    max_attempts=settings.max_retries,
    min_wait=settings.retry_min_wait,
    max_wait=settings.retry_max_wait,
)


def is_retryable_error(error: Exception) -> bool:
    """Return True for OSErrors whose errno marks them as transient."""
    return isinstance(error, OSError) and error.errno in _TRANSIENT_ERRNOS


def reraise_transient(error: OSError) -> None:
    """Re-raise ``error`` as TransientIOError when it should be retried."""
    if is_retryable_error(error):
        logger.warning(f"Transient I/O error: {error}")
        raise TransientIOError(error.errno, str(error)) from error
    raise error
