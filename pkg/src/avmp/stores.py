"""Physical backing stores: per-pool page geometry, free sets, and resizing.

Each store tracks a contiguous index range [0, capacity_pages) of fixed-stride
pages.  Allocation is lowest-index-first and all-or-nothing; shrinking removes
the highest indices and relocates any live page above the cut (bookkeeping
only, reported to the caller as remap pairs so the page table can follow).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from avmp.errors import CapacityError, ConfigError, LogicError, ResizeRefusedError
from avmp.handles import PoolId, page_stride


@dataclass(frozen=True)
class PoolGeometry:
    """Static sizing of one pool: page byte size and capacity bounds."""

    pool: PoolId
    page_bytes: int
    initial_capacity_pages: int
    max_capacity_pages: int

    def __post_init__(self):
        if self.page_bytes <= 0:
            raise ConfigError(f"{self.pool.name} page_bytes must be positive")
        if self.initial_capacity_pages < 0:
            raise ConfigError(f"{self.pool.name} initial capacity is negative")
        if self.initial_capacity_pages > self.max_capacity_pages:
            raise ConfigError(
                f"{self.pool.name} initial capacity "
                f"{self.initial_capacity_pages} exceeds max {self.max_capacity_pages}"
            )

    @property
    def stride(self) -> int:
        return page_stride(self.page_bytes)


class BackingStore:
    """A resizable pool of fixed-stride pages with a deterministic free set.

    The reservation (max_capacity_pages * stride) is fixed at construction
    and never changes; only capacity_pages moves, between 0 and the maximum.
    """

    def __init__(self, geometry: PoolGeometry):
        self.geometry = geometry
        self.capacity_pages = geometry.initial_capacity_pages
        self.reserved_bytes = geometry.max_capacity_pages * geometry.stride
        self._free: set[int] = set(range(self.capacity_pages))
        self._min_heap: list[int] = list(range(self.capacity_pages))

    @property
    def pool(self) -> PoolId:
        return self.geometry.pool

    @property
    def stride(self) -> int:
        return self.geometry.stride

    @property
    def free_count(self) -> int:
        return len(self._free)

    @property
    def live_pages(self) -> int:
        return self.capacity_pages - len(self._free)

    @property
    def free_fraction(self) -> float:
        if self.capacity_pages == 0:
            return 0.0
        return len(self._free) / self.capacity_pages

    def free_indices(self) -> list[int]:
        """Sorted free indices (tests and audits)."""
        return sorted(self._free)

    def alloc_pages(self, n: int) -> list[int]:
        """Take the n lowest free indices, or raise CapacityError untouched."""
        if n < 1:
            raise LogicError(f"alloc_pages needs n >= 1, got {n}")
        if len(self._free) < n:
            raise CapacityError(self.pool, n, len(self._free))
        out: list[int] = []
        while len(out) < n:
            idx = heapq.heappop(self._min_heap)
            if idx in self._free:        # skip lazily-deleted entries
                self._free.discard(idx)
                out.append(idx)
        return out

    def free_pages(self, indices) -> None:
        """Return pages to the free set; double frees are fatal."""
        for idx in indices:
            if not 0 <= idx < self.capacity_pages:
                raise LogicError(
                    f"{self.pool.name} free of index {idx} outside capacity "
                    f"{self.capacity_pages}"
                )
            if idx in self._free:
                raise LogicError(f"{self.pool.name} double free of page {idx}")
            self._free.add(idx)
            heapq.heappush(self._min_heap, idx)

    def resize_capacity(self, delta_pages: int) -> list[tuple[int, int]]:
        """Grow or shrink the pool; returns (old, new) remap pairs on shrink.

        Shrink removes the highest indices.  Live pages above the cut are
        relocated to the lowest free slots below it, highest live first, and
        the caller must mirror each returned pair in its page table.
        """
        if delta_pages == 0:
            return []
        if delta_pages > 0:
            new_cap = self.capacity_pages + delta_pages
            if new_cap > self.geometry.max_capacity_pages:
                raise ResizeRefusedError(
                    f"{self.pool.name} grow to {new_cap} exceeds max "
                    f"{self.geometry.max_capacity_pages}"
                )
            for idx in range(self.capacity_pages, new_cap):
                self._free.add(idx)
                heapq.heappush(self._min_heap, idx)
            self.capacity_pages = new_cap
            return []

        drop = -delta_pages
        if drop > len(self._free):
            raise ResizeRefusedError(
                f"{self.pool.name} shrink by {drop} refused: only "
                f"{len(self._free)} free page(s)"
            )
        new_cap = self.capacity_pages - drop
        was_free_above = {idx for idx in self._free if idx >= new_cap}
        self._free -= was_free_above
        remaps: list[tuple[int, int]] = []
        for idx in range(self.capacity_pages - 1, new_cap - 1, -1):
            if idx in was_free_above:
                continue
            # idx is live; relocate to the lowest free slot below the cut.
            # Enough such slots exist because free_count >= drop held above.
            while True:
                slot = heapq.heappop(self._min_heap)
                if slot in self._free:
                    break
            self._free.discard(slot)
            remaps.append((idx, slot))
        self.capacity_pages = new_cap
        return remaps

    def snapshot(self):
        """Copyable state for migration rollback."""
        return (self.capacity_pages, frozenset(self._free))

    def restore(self, state) -> None:
        capacity, free = state
        self.capacity_pages = capacity
        self._free = set(free)
        self._min_heap = sorted(self._free)


def new_store(geometry: PoolGeometry) -> BackingStore:
    """Construct a store with every initial page free."""
    return BackingStore(geometry)
