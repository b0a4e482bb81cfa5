"""The evaluated allocator variants behind one admit/extend/release interface.

Variants:

* ``padded_unified``   - one page pool; per-layer recurrent state is padded up
  to whole attention pages, so state-holding sequences over-consume and the
  pool exhausts early.
* ``fixed_dual``       - two pools split once at construction; handles map
  straight onto physical page indices (no indirection layer).
* ``avmp_static``      - same fixed split, but all accesses go through a
  virtual page table and pool-tagged handles; reservations are oversized so
  either pool could grow to the whole budget.
* ``avmp_dynamic``     - avmp_static plus CapacityError-triggered batched
  capacity migration with logical-op throttling and rollback.

``mamba_full_memory_ratio`` is the attention-pool share of the budget; the
remainder backs the recurrent-state blocks.  At 0.9 the state pool is starved
to 10%, which collapses under concurrency-heavy traffic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from avmp.errors import CapacityError, ConfigError, LogicError
from avmp.handles import PoolId, VirtualPageTable, encode_handle, page_stride
from avmp.models import ModelSpec
from avmp.phases import MIGRATION, SERVICE, NullClock
from avmp.rebalancer import RebalanceEvent, Rebalancer
from avmp.stores import BackingStore, PoolGeometry


class AllocatorVariant(str, Enum):
    PADDED_UNIFIED = "padded_unified"
    FIXED_DUAL = "fixed_dual"
    AVMP_STATIC = "avmp_static"
    AVMP_DYNAMIC = "avmp_dynamic"


@dataclass(frozen=True)
class AllocatorConfig:
    """Variant selection plus the dynamic-rebalancer tuning knobs."""

    variant: AllocatorVariant
    mamba_full_memory_ratio: float = 0.5
    migration_batch_size: int = 128
    threshold_low: float = 0.05
    threshold_high: float = 0.30
    min_rebalance_interval_ops: int = 1000

    def __post_init__(self):
        if not 0.0 < self.mamba_full_memory_ratio < 1.0:
            raise ConfigError(
                f"mamba_full_memory_ratio {self.mamba_full_memory_ratio} "
                "outside (0, 1)")
        if self.threshold_low >= self.threshold_high:
            raise ConfigError(
                f"threshold_low {self.threshold_low} must be below "
                f"threshold_high {self.threshold_high}")
        if self.migration_batch_size < 1:
            raise ConfigError("migration_batch_size must be >= 1")
        if self.min_rebalance_interval_ops < 0:
            raise ConfigError("min_rebalance_interval_ops must be >= 0")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "mamba_full_memory_ratio": self.mamba_full_memory_ratio,
            "migration_batch_size": self.migration_batch_size,
            "threshold_low": self.threshold_low,
            "threshold_high": self.threshold_high,
            "min_rebalance_interval_ops": self.min_rebalance_interval_ops,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AllocatorConfig":
        return cls(
            variant=AllocatorVariant(data["variant"]),
            mamba_full_memory_ratio=float(data.get("mamba_full_memory_ratio", 0.5)),
            migration_batch_size=int(data.get("migration_batch_size", 128)),
            threshold_low=float(data.get("threshold_low", 0.05)),
            threshold_high=float(data.get("threshold_high", 0.30)),
            min_rebalance_interval_ops=int(
                data.get("min_rebalance_interval_ops", 1000)),
        )


@dataclass
class SequenceAllocation:
    """Public view of one admitted sequence's handles."""

    seq_id: object
    kv_handles: list[int]
    ssm_handles: list[int]
    tokens: int


@dataclass
class _SeqState:
    tokens: int
    kv_handles: list[int] = field(default_factory=list)
    ssm_handles: list[int] = field(default_factory=list)
    reserved_pages: int = 0   # pre-reserved decode-growth pages not yet drawn


class Allocator:
    """Common sequence bookkeeping; pool mechanics live in the subclasses.

    Admission may optionally pre-reserve the sequence's decode growth
    (``total_tokens``): the reservation participates in every capacity check
    but pages are only drawn as decoding actually crosses page boundaries.
    Reserved-growth admission keeps a cell's aggregate growth debt always
    satisfiable, so decode extensions cannot deadlock a saturated pool.
    """

    def __init__(self, config: AllocatorConfig, budget_bytes: int,
                 model: ModelSpec, clock=None):
        if budget_bytes <= 0:
            raise ConfigError("budget_bytes must be positive")
        self.config = config
        self.budget_bytes = budget_bytes
        self.model = model
        self.clock = clock if clock is not None else NullClock()
        self._seqs: dict = {}
        self._growth_reserved = 0   # outstanding growth pages (page pool)
        # Every CapacityError that escaped to the caller, in raise order.
        self.error_log: list[tuple[int, int, int]] = []
        self.op_counter = 0

    # -- pool plumbing supplied by subclasses --------------------------------

    def _alloc(self, pool: PoolId, n: int, hold_back: int = 0) -> list[int]:
        """Allocate n pages; fail unless hold_back more would also still fit."""
        raise NotImplementedError

    def _free(self, pool: PoolId, indices: list[int]) -> None:
        raise NotImplementedError

    def _wrap_handles(self, pool: PoolId, indices: list[int]) -> list[int]:
        raise NotImplementedError

    def _unwrap_handles(self, pool: PoolId, handles: list[int]) -> list[int]:
        raise NotImplementedError

    # -- shared request-facing surface ---------------------------------------

    def note_op(self) -> None:
        """Advance the logical operation clock (one tick per allocator call)."""
        self.op_counter += 1

    def admit(self, seq_id, prompt_tokens: int,
              total_tokens: int | None = None) -> SequenceAllocation:
        """Allocate prompt pages and per-layer state atomically.

        With ``total_tokens`` set, the pages the sequence will grow into by
        that length are reserved now and drawn incrementally by
        extend_decode.
        """
        self.note_op()
        if seq_id in self._seqs:
            raise LogicError(f"sequence {seq_id!r} already admitted")
        if prompt_tokens < 1:
            raise LogicError("prompt_tokens must be >= 1")
        kv_pages = self.model.kv_pages_for(prompt_tokens)
        reserve = 0
        if total_tokens is not None:
            if total_tokens < prompt_tokens:
                raise LogicError("total_tokens below prompt_tokens")
            reserve = self.model.kv_pages_for(total_tokens) - kv_pages
        kv_idx = self._alloc(PoolId.KV, kv_pages, hold_back=reserve)
        self._growth_reserved += reserve
        try:
            ssm_handles = self._admit_state()
        except CapacityError:
            self._growth_reserved -= reserve
            self._free(PoolId.KV, kv_idx)
            raise
        state = _SeqState(tokens=prompt_tokens, reserved_pages=reserve)
        state.kv_handles = self._wrap_handles(PoolId.KV, kv_idx)
        state.ssm_handles = ssm_handles
        self._seqs[seq_id] = state
        return self._view(seq_id)

    def _admit_state(self) -> list[int]:
        idx = self._alloc(PoolId.SSM, self.model.ssm_layers)
        return self._wrap_handles(PoolId.SSM, idx)

    def _release_state(self, state: _SeqState) -> None:
        self._free(PoolId.SSM, self._unwrap_handles(PoolId.SSM, state.ssm_handles))

    def extend_decode(self, seq_id, new_total_tokens: int) -> SequenceAllocation:
        """Grow a sequence's page run; state blocks update in place."""
        self.note_op()
        state = self._seqs.get(seq_id)
        if state is None:
            raise LogicError(f"sequence {seq_id!r} not admitted")
        if new_total_tokens < state.tokens:
            raise LogicError(
                f"sequence {seq_id!r} shrank from {state.tokens} to "
                f"{new_total_tokens} tokens (append-only)")
        new_pages = (self.model.kv_pages_for(new_total_tokens)
                     - self.model.kv_pages_for(state.tokens))
        if new_pages > 0:
            covered = min(new_pages, state.reserved_pages)
            # Reserved pages are guaranteed present; only unreserved growth
            # can fail.
            self._growth_reserved -= covered
            state.reserved_pages -= covered
            try:
                idx = self._alloc(PoolId.KV, new_pages)
            except CapacityError:
                self._growth_reserved += covered
                state.reserved_pages += covered
                raise
            state.kv_handles.extend(self._wrap_handles(PoolId.KV, idx))
        state.tokens = new_total_tokens
        return self._view(seq_id)

    def release(self, seq_id) -> None:
        """Free every page and block the sequence holds."""
        self.note_op()
        state = self._seqs.pop(seq_id, None)
        if state is None:
            raise LogicError(f"sequence {seq_id!r} not admitted (double release?)")
        self._growth_reserved -= state.reserved_pages
        self._free(PoolId.KV, self._unwrap_handles(PoolId.KV, state.kv_handles))
        self._release_state(state)

    def _view(self, seq_id) -> SequenceAllocation:
        state = self._seqs[seq_id]
        return SequenceAllocation(
            seq_id=seq_id,
            kv_handles=list(state.kv_handles),
            ssm_handles=list(state.ssm_handles),
            tokens=state.tokens,
        )

    @property
    def live_sequences(self) -> int:
        return len(self._seqs)

    # -- metrics -------------------------------------------------------------

    def reserved_bytes(self) -> tuple[int, int]:
        raise NotImplementedError

    def free_fractions(self) -> tuple[float, float]:
        raise NotImplementedError

    def free_counts(self) -> tuple[int, int]:
        raise NotImplementedError

    def max_pages(self, pool: PoolId) -> int:
        raise NotImplementedError

    @property
    def rebalance_events(self) -> list[RebalanceEvent]:
        return []

    @property
    def capacity_error_ops(self) -> list[int]:
        """Logical op index of every CapacityError seen (dynamic variant)."""
        return []

    def _record_error(self, err: CapacityError) -> None:
        self.error_log.append(
            (int(err.pool), err.requested_pages, err.free_pages_at_failure))


def _split_budget(budget_bytes: int, kv_share: float) -> tuple[int, int]:
    kv_bytes = int(budget_bytes * kv_share)
    ssm_bytes = budget_bytes - kv_bytes
    return kv_bytes, ssm_bytes


class PaddedUnifiedAllocator(Allocator):
    """Single pool at attention-page granularity; state blocks pad to pages."""

    def __init__(self, config, budget_bytes, model, clock=None):
        super().__init__(config, budget_bytes, model, clock)
        pages = budget_bytes // model.kv_page_bytes
        self.kv_store = BackingStore(PoolGeometry(
            pool=PoolId.KV,
            page_bytes=model.kv_page_bytes,
            initial_capacity_pages=pages,
            max_capacity_pages=pages,
        ))
        # whole pages consumed per state block after padding
        self.pad_pages_per_block = -(-model.ssm_block_bytes // model.kv_page_bytes)

    def _alloc(self, pool, n, hold_back=0):
        effective_free = self.kv_store.free_count - self._growth_reserved
        try:
            if effective_free < n + hold_back:
                raise CapacityError(PoolId.KV, n + hold_back, effective_free)
            with self.clock.scope(SERVICE):
                return self.kv_store.alloc_pages(n)
        except CapacityError as err:
            self._record_error(err)
            raise

    def _free(self, pool, indices):
        if not indices:
            return
        with self.clock.scope(SERVICE):
            self.kv_store.free_pages(indices)

    def _wrap_handles(self, pool, indices):
        return [encode_handle(PoolId.KV, i) for i in indices]

    def _unwrap_handles(self, pool, handles):
        return [h & 0x7FFFFFFF for h in handles]

    def _admit_state(self):
        # One padded page group per recurrent layer, all in the single pool.
        idx = self._alloc(PoolId.KV, self.model.ssm_layers * self.pad_pages_per_block)
        handles = self._wrap_handles(PoolId.KV, idx)
        return handles

    def _release_state(self, state):
        self._free(PoolId.KV, self._unwrap_handles(PoolId.KV, state.ssm_handles))

    def reserved_bytes(self):
        return (self.kv_store.reserved_bytes, 0)

    def free_fractions(self):
        f = self.kv_store.free_fraction
        return (f, f)

    def free_counts(self):
        return (self.kv_store.free_count, 0)

    def max_pages(self, pool):
        return self.kv_store.geometry.max_capacity_pages if pool is PoolId.KV else 0

    def consumed_bytes(self) -> int:
        return self.kv_store.live_pages * self.kv_store.stride


class _DualPoolAllocator(Allocator):
    """Shared mechanics for the two-pool variants."""

    oversized_reservation = False

    def __init__(self, config, budget_bytes, model, clock=None):
        super().__init__(config, budget_bytes, model, clock)
        kv_bytes, ssm_bytes = _split_budget(budget_bytes,
                                            config.mamba_full_memory_ratio)
        kv_stride = page_stride(model.kv_page_bytes)
        ssm_stride = page_stride(model.ssm_block_bytes)
        kv_initial = kv_bytes // kv_stride
        ssm_initial = ssm_bytes // ssm_stride
        if self.oversized_reservation:
            kv_max = budget_bytes // kv_stride
            ssm_max = budget_bytes // ssm_stride
        else:
            kv_max, ssm_max = kv_initial, ssm_initial
        self.kv_store = BackingStore(PoolGeometry(
            PoolId.KV, model.kv_page_bytes, kv_initial, kv_max))
        self.ssm_store = BackingStore(PoolGeometry(
            PoolId.SSM, model.ssm_block_bytes, ssm_initial, ssm_max))

    def _store(self, pool: PoolId) -> BackingStore:
        return self.kv_store if pool is PoolId.KV else self.ssm_store

    def _effective_free(self, pool: PoolId) -> int:
        store = self._store(pool)
        if pool is PoolId.KV:
            return store.free_count - self._growth_reserved
        return store.free_count

    def _alloc(self, pool, n, hold_back=0):
        effective_free = self._effective_free(pool)
        try:
            if effective_free < n + hold_back:
                raise CapacityError(pool, n + hold_back, effective_free)
            with self.clock.scope(SERVICE):
                return self._store(pool).alloc_pages(n)
        except CapacityError as err:
            self._record_error(err)
            raise

    def _free(self, pool, indices):
        if not indices:
            return
        with self.clock.scope(SERVICE):
            self._store(pool).free_pages(indices)

    def reserved_bytes(self):
        return (self.kv_store.reserved_bytes, self.ssm_store.reserved_bytes)

    def free_fractions(self):
        return (self.kv_store.free_fraction, self.ssm_store.free_fraction)

    def effective_free_fractions(self):
        """Free fractions net of outstanding decode-growth reservations."""
        kv = self.kv_store
        ssm = self.ssm_store
        kv_frac = ((kv.free_count - self._growth_reserved) / kv.capacity_pages
                   if kv.capacity_pages else 0.0)
        return (kv_frac, ssm.free_fraction)

    def free_counts(self):
        return (self.kv_store.free_count, self.ssm_store.free_count)

    def max_pages(self, pool):
        return self._store(pool).geometry.max_capacity_pages

    def consumed_bytes(self) -> int:
        return (self.kv_store.live_pages * self.kv_store.stride
                + self.ssm_store.live_pages * self.ssm_store.stride)


class FixedDualAllocator(_DualPoolAllocator):
    """Static split with direct physical indexing (models a fixed dual pool)."""

    oversized_reservation = False

    def _wrap_handles(self, pool, indices):
        return [encode_handle(pool, i) for i in indices]

    def _unwrap_handles(self, pool, handles):
        return [h & 0x7FFFFFFF for h in handles]


class AvmpStaticAllocator(_DualPoolAllocator):
    """Static split behind the virtual-handle layer (oversized reservation)."""

    oversized_reservation = True

    def __init__(self, config, budget_bytes, model, clock=None):
        super().__init__(config, budget_bytes, model, clock)
        self.table = VirtualPageTable(
            kv_stride=self.kv_store.stride,
            ssm_stride=self.ssm_store.stride,
            kv_slab_base=0,
            ssm_slab_base=_align_slab(self.kv_store.reserved_bytes),
        )

    def _wrap_handles(self, pool, indices):
        return [self.table.insert(pool, i) for i in indices]

    def _unwrap_handles(self, pool, handles):
        return [self.table.free(h) for h in handles]

    def resolve(self, handle: int):
        with self.clock.scope(SERVICE):
            return self.table.resolve(handle)


def _align_slab(offset: int) -> int:
    return (offset + 127) // 128 * 128


class AvmpDynamicAllocator(AvmpStaticAllocator):
    """Virtual-handle allocator with CapacityError-gated capacity migration."""

    def __init__(self, config, budget_bytes, model, clock=None):
        super().__init__(config, budget_bytes, model, clock)
        self.rebalancer = Rebalancer(
            threshold_low=config.threshold_low,
            threshold_high=config.threshold_high,
            migration_batch_size=config.migration_batch_size,
            min_rebalance_interval_ops=config.min_rebalance_interval_ops,
        )
        self._error_ops: list[int] = []

    @property
    def rebalance_events(self):
        return self.rebalancer.events

    @property
    def capacity_error_ops(self):
        return self._error_ops

    def _try_alloc(self, pool, n, hold_back):
        effective_free = self._effective_free(pool)
        if effective_free < n + hold_back:
            raise CapacityError(pool, n + hold_back, effective_free)
        with self.clock.scope(SERVICE):
            return self._store(pool).alloc_pages(n)

    def note_op(self):
        self.op_counter += 1
        self.rebalancer.note_op()

    def _alloc(self, pool, n, hold_back=0):
        try:
            out = self._try_alloc(pool, n, hold_back)
        except CapacityError as err:
            self._error_ops.append(self.rebalancer.throttle.op_counter)
            kv_free, ssm_free = self.effective_free_fractions()
            self.rebalancer.observe(kv_free, ssm_free)
            decision = self.rebalancer.on_capacity_error(err, kv_free, ssm_free)
            if decision.propagate:
                self._record_error(err)
                raise
            donor_store = self._store(decision.donor)
            # Donor shrink must never touch pages backing growth reservations.
            donor_cap = self._effective_free(decision.donor)
            with self.clock.scope(MIGRATION):
                event = self.rebalancer.migrate(donor_store, self._store(pool),
                                                self.table, max_pages=donor_cap)
            if event.rolled_back:
                self._record_error(err)
                raise
            # Retry the failing allocation exactly once after migration.
            try:
                out = self._try_alloc(pool, n, hold_back)
            except CapacityError as retry_err:
                self._record_error(retry_err)
                raise
        kv_free, ssm_free = self.effective_free_fractions()
        self.rebalancer.observe(kv_free, ssm_free)
        return out

    def _free(self, pool, indices):
        if not indices:
            return
        with self.clock.scope(SERVICE):
            self._store(pool).free_pages(indices)
        kv_free, ssm_free = self.effective_free_fractions()
        self.rebalancer.observe(kv_free, ssm_free)


_VARIANT_CLASSES = {
    AllocatorVariant.PADDED_UNIFIED: PaddedUnifiedAllocator,
    AllocatorVariant.FIXED_DUAL: FixedDualAllocator,
    AllocatorVariant.AVMP_STATIC: AvmpStaticAllocator,
    AllocatorVariant.AVMP_DYNAMIC: AvmpDynamicAllocator,
}


def new_allocator(config: AllocatorConfig, budget_bytes: int,
                  model: ModelSpec, clock=None) -> Allocator:
    """Build the configured variant over a fresh set of backing stores."""
    cls = _VARIANT_CLASSES[config.variant]
    return cls(config, budget_bytes, model, clock)
