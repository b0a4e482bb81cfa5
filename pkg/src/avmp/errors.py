"""Exception types shared across the allocator and harness layers."""

from __future__ import annotations


class LogicError(RuntimeError):
    """A caller violated an API contract (double free, unknown id, ...).

    These are programming errors, never recoverable workload conditions,
    and tests treat them as fatal.
    """


class ConfigError(ValueError):
    """A configuration object or file failed validation."""


class CapacityError(Exception):
    """A pool could not satisfy an allocation.

    This is the only allocation failure that is *data* rather than a bug:
    the dynamic allocator reacts to it and the simulator counts it.
    """

    def __init__(self, pool, requested_pages: int, free_pages_at_failure: int):
        self.pool = pool
        self.requested_pages = requested_pages
        self.free_pages_at_failure = free_pages_at_failure
        super().__init__(
            f"{pool.name} pool out of capacity: requested {requested_pages} "
            f"page(s), {free_pages_at_failure} free"
        )


class StaleHandleError(LogicError):
    """A virtual handle was resolved after being freed (or never existed)."""


class ResizeRefusedError(LogicError):
    """A capacity resize would violate pool bounds (live pages or maximum)."""


class PairingError(ValueError):
    """Two result sets could not be matched on their full cell keys."""


class SchemaError(ValueError):
    """A results file carried an unknown or mismatched schema version."""


class TraceIngestError(ValueError):
    """A conversation trace file could not be ingested."""

    def __init__(self, message: str, skipped: int = 0):
        self.skipped = skipped
        super().__init__(message)
