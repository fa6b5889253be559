"""
Wall-time measurement for pipeline stages.

Times feed the per-optimization diagnostics records and the run summary, so
they come from a monotonic clock and keep sub-millisecond resolution.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Generator, Iterable, Optional


@dataclass
class TimingInfo:
    """Start, end and elapsed time of one measurement."""

    start_time: float
    end_time: Optional[float] = None
    elapsed_seconds: Optional[float] = None
    elapsed_ms: Optional[float] = None

    def finish(self) -> "TimingInfo":
        self.end_time = time.perf_counter()
        self.elapsed_seconds = self.end_time - self.start_time
        self.elapsed_ms = self.elapsed_seconds * 1000.0
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"elapsed_seconds": self.elapsed_seconds, "elapsed_ms": self.elapsed_ms}


class Timer:
    """Running timer; readings freeze once ``finish`` is called."""

    def __init__(self) -> None:
        self.timing = TimingInfo(start_time=time.perf_counter())

    def elapsed_ms(self) -> float:
        if self.timing.elapsed_ms is not None:
            return self.timing.elapsed_ms
        return (time.perf_counter() - self.timing.start_time) * 1000.0

    def elapsed_seconds(self) -> float:
        if self.timing.elapsed_seconds is not None:
            return self.timing.elapsed_seconds
        return time.perf_counter() - self.timing.start_time

    def finish(self) -> TimingInfo:
        return self.timing.finish()


@dataclass
class StageStats:
    """Running count, mean and maximum of one stage's wall times (ms)."""

    count: int = 0
    total_ms: float = 0.0
    max_ms: float = 0.0

    def add(self, elapsed_ms: float) -> None:
        self.count += 1
        self.total_ms += elapsed_ms
        self.max_ms = max(self.max_ms, elapsed_ms)

    @property
    def mean_ms(self) -> float:
        return self.total_ms / self.count if self.count else 0.0

    @classmethod
    def of(cls, records: Iterable[Dict[str, Any]], key: str) -> "StageStats":
        """Statistics of ``key`` over diagnostics records that carry it."""
        stats = cls()
        for record in records:
            if key in record:
                stats.add(float(record[key]))
        return stats

    def to_dict(self) -> Dict[str, Any]:
        return {
            "count": self.count,
            "mean_ms": round(self.mean_ms, 3),
            "max_ms": round(self.max_ms, 3),
        }


@contextmanager
def measure_time(
    operation_name: str = "operation", logger: Optional[logging.Logger] = None
) -> Generator[Timer, None, None]:
    """
    Time a pipeline stage and log its duration at debug level.

    Args:
        operation_name: Stage name, logged as the ``operation`` field
        logger: Logger for the start and completion records (optional)

    Yields:
        Timer for reading the elapsed time inside the block
    """
    timer = Timer()

    if logger:
        logger.debug(f"Starting {operation_name}")

    try:
        yield timer
    finally:
        timing_info = timer.finish()

        if logger:
            logger.debug(
                f"Completed {operation_name}",
                extra={"operation": operation_name, "elapsed_ms": timing_info.elapsed_ms},
            )


@contextmanager
def capture_timing() -> Generator[Timer, None, None]:
    """Time a block without logging; the timer is finished on exit."""
    timer = Timer()
    try:
        yield timer
    finally:
        timer.finish()
