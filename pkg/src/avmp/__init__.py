"""Asymmetric two-pool paged memory allocator and benchmark harness.

The package is organised around a small allocator core (handles, stores,
allocators, rebalancer) plus a deterministic benchmarking layer (workloads,
simulator, stats) and a sweep CLI.
"""

from avmp.errors import (
    CapacityError,
    ConfigError,
    LogicError,
    PairingError,
    ResizeRefusedError,
    SchemaError,
    StaleHandleError,
    TraceIngestError,
)
from avmp.handles import PoolId, decode_handle, encode_handle

__all__ = [
    "CapacityError",
    "ConfigError",
    "LogicError",
    "PairingError",
    "ResizeRefusedError",
    "SchemaError",
    "StaleHandleError",
    "TraceIngestError",
    "PoolId",
    "encode_handle",
    "decode_handle",
]

__version__ = "0.1.0"
