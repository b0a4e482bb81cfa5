"""Four-bucket wall-clock accounting: service / OOM retry / migration / idle.

Scopes are flat by contract: service, oom_retry, and migration regions are
mutually exclusive, and idle is defined as the unmeasured remainder of cell
wall time, so the four buckets always partition the total exactly.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

from avmp.errors import LogicError

SERVICE = "service"
OOM_RETRY = "oom_retry"
MIGRATION = "migration"

_BUCKETS = (SERVICE, OOM_RETRY, MIGRATION)


class PhaseClock:
    """Accumulates wall seconds per named phase for one cell run."""

    def __init__(self):
        self.service_s = 0.0
        self.oom_retry_s = 0.0
        self.migration_s = 0.0
        self.idle_s = 0.0
        self._active: str | None = None

    @contextmanager
    def scope(self, bucket: str):
        """Time the enclosed region into one bucket; scopes never nest."""
        if bucket not in _BUCKETS:
            raise LogicError(f"unknown phase bucket {bucket!r}")
        if self._active is not None:
            raise LogicError(
                f"phase scope {bucket!r} opened inside active scope {self._active!r}"
            )
        self._active = bucket
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self._active = None
            if bucket == SERVICE:
                self.service_s += elapsed
            elif bucket == OOM_RETRY:
                self.oom_retry_s += elapsed
            else:
                self.migration_s += elapsed

    def close(self, total_wall_s: float) -> None:
        """Assign the unmeasured remainder of the cell's wall time to idle."""
        measured = self.service_s + self.oom_retry_s + self.migration_s
        self.idle_s = max(0.0, total_wall_s - measured)

    def as_dict(self) -> dict[str, float]:
        return {
            "service_s": self.service_s,
            "oom_retry_s": self.oom_retry_s,
            "migration_s": self.migration_s,
            "idle_s": self.idle_s,
        }


class NullClock:
    """Timing sink for allocator use outside a simulated cell."""

    @contextmanager
    def scope(self, bucket: str):
        yield
