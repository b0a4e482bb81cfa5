"""32-bit pool-tagged virtual handles and the page table that resolves them.

A handle packs the pool tag into bit 31 and a 31-bit page id below it; page
ids are handed out by a monotone per-pool counter and never recycled, so a
freed handle stays detectably stale for the lifetime of its table.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

from avmp.errors import StaleHandleError

SLAB_ALIGN = 128
PAGE_ALIGN = 16

_POOL_TAG_BIT = 31
_PAGE_ID_MASK = (1 << 31) - 1


class PoolId(IntEnum):
    """The two backing pools. Values double as the handle tag bit."""

    KV = 0
    SSM = 1

    def other(self) -> "PoolId":
        return PoolId.SSM if self is PoolId.KV else PoolId.KV


def encode_handle(pool: PoolId, page_id: int) -> int:
    """Pack (pool, page_id) into a 32-bit handle; tag in bit 31."""
    if not 0 <= page_id < (1 << 31):
        raise ValueError(f"page_id {page_id} out of 31-bit range")
    return (int(pool) << _POOL_TAG_BIT) | page_id


def decode_handle(handle: int) -> tuple[PoolId, int]:
    """Inverse of encode_handle; total on 32-bit values."""
    return PoolId((handle >> _POOL_TAG_BIT) & 1), handle & _PAGE_ID_MASK


def page_stride(page_bytes: int) -> int:
    """Round a page byte size up to the in-slab alignment granule."""
    return (page_bytes + PAGE_ALIGN - 1) // PAGE_ALIGN * PAGE_ALIGN


@dataclass(frozen=True)
class PhysicalLocation:
    """Resolved position of a live page inside its pool's slab."""

    pool: PoolId
    slab_base: int
    page_offset: int


class _PoolMap:
    __slots__ = ("stride", "slab_base", "entries", "reverse", "next_id")

    def __init__(self, stride: int, slab_base: int):
        if slab_base % SLAB_ALIGN != 0:
            raise ValueError(f"slab base {slab_base} not {SLAB_ALIGN}-byte aligned")
        self.stride = stride
        self.slab_base = slab_base
        self.entries: dict[int, int] = {}   # page_id -> physical index
        self.reverse: dict[int, int] = {}   # physical index -> page_id
        self.next_id = 0


class VirtualPageTable:
    """Maps live handles to physical page indices in either backing store.

    Page ids are monotone per pool; remapping a physical page (during a
    capacity shrink) updates table entries only and never touches handles
    held by callers.
    """

    def __init__(self, kv_stride: int, ssm_stride: int,
                 kv_slab_base: int = 0, ssm_slab_base: int = 0):
        self._pools = {
            PoolId.KV: _PoolMap(kv_stride, kv_slab_base),
            PoolId.SSM: _PoolMap(ssm_stride, ssm_slab_base),
        }

    def insert(self, pool: PoolId, physical_index: int) -> int:
        """Register a live physical page and return its new handle."""
        pm = self._pools[pool]
        page_id = pm.next_id
        pm.next_id += 1
        handle = encode_handle(pool, page_id)
        pm.entries[page_id] = physical_index
        pm.reverse[physical_index] = page_id
        return handle

    def lookup(self, handle: int) -> tuple[PoolId, int]:
        """Return (pool, physical index) for a live handle."""
        pool, page_id = decode_handle(handle)
        phys = self._pools[pool].entries.get(page_id)
        if phys is None:
            raise StaleHandleError(
                f"handle 0x{handle:08X} ({pool.name} page_id {page_id}) is not live"
            )
        return pool, phys

    def free(self, handle: int) -> int:
        """Drop a live handle's entry; returns the physical index it held."""
        pool, page_id = decode_handle(handle)
        pm = self._pools[pool]
        phys = pm.entries.pop(page_id, None)
        if phys is None:
            raise StaleHandleError(
                f"handle 0x{handle:08X} ({pool.name} page_id {page_id}) already freed"
            )
        del pm.reverse[phys]
        return phys

    def remap_physical(self, pool: PoolId, old_index: int, new_index: int) -> None:
        """Point the entry covering old_index at new_index (shrink bookkeeping)."""
        pm = self._pools[pool]
        page_id = pm.reverse.pop(old_index, None)
        if page_id is None:
            raise StaleHandleError(
                f"no live entry for {pool.name} physical page {old_index}"
            )
        pm.entries[page_id] = new_index
        pm.reverse[new_index] = page_id

    def resolve(self, handle: int) -> PhysicalLocation:
        """Resolve a live handle to an aligned physical location."""
        pool, phys = self.lookup(handle)
        pm = self._pools[pool]
        return PhysicalLocation(
            pool=pool,
            slab_base=pm.slab_base,
            page_offset=phys * pm.stride,
        )

    def live_count(self, pool: PoolId) -> int:
        return len(self._pools[pool].entries)

    def snapshot(self):
        """Cheap copyable state for migration rollback."""
        return {
            pool: (dict(pm.entries), dict(pm.reverse), pm.next_id)
            for pool, pm in self._pools.items()
        }

    def restore(self, state) -> None:
        for pool, (entries, reverse, next_id) in state.items():
            pm = self._pools[pool]
            pm.entries = dict(entries)
            pm.reverse = dict(reverse)
            pm.next_id = next_id
