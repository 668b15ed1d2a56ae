from __future__ import annotations

import logging
import time
from typing import Callable, TypeVar

from reqpc.errors import TransportError

log = logging.getLogger(__name__)

T = TypeVar("T")


def call_with_retries(
    fn: Callable[[], T],
    attempts: int = 3,
    base_delay: float = 0.5,
    what: str = "provider call",
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run ``fn``, retrying only on :class:`TransportError` with exponential backoff."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    last: TransportError | None = None
    for attempt in range(1, attempts + 1):
        try:
            return fn()
        except TransportError as exc:
            last = exc
            if attempt < attempts:
                delay = base_delay * (2 ** (attempt - 1))
                log.warning("%s failed (attempt %d/%d): %s; retrying in %.2fs", what, attempt, attempts, exc, delay)
                if delay > 0:
                    sleep(delay)
    raise TransportError(f"{what} failed after {attempts} attempts: {last}", attempts=attempts) from last
