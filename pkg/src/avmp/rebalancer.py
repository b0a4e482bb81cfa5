"""Pressure state machine and capacity migration between the two pools.

Migration is evaluated strictly inside the CapacityError handler of the
allocation path: if the other pool holds slack above threshold_high and the
logical-op throttle allows it, a batch of donor pages is released (high-end
shrink) and the recipient grows by the whole pages that fit in the freed
bytes.  Failures midway roll both pools and the page table back to their
pre-migration snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from avmp.errors import CapacityError, ResizeRefusedError
from avmp.handles import PoolId, VirtualPageTable
from avmp.stores import BackingStore


class PressureState(Enum):
    BALANCED = "balanced"
    KV_PRESSURED = "kv_pressured"
    SSM_PRESSURED = "ssm_pressured"
    REBALANCING = "rebalancing"


@dataclass
class ThrottleState:
    """Monotone logical operation counter plus the last successful rebalance."""

    op_counter: int = 0
    last_rebalance_op: int | None = None

    def note_op(self) -> None:
        self.op_counter += 1


@dataclass(frozen=True)
class RebalanceEvent:
    """One migration step (successful or rolled back)."""

    at_op: int
    donor: PoolId
    recipient: PoolId
    donor_pages_freed: int
    recipient_pages_gained: int
    bytes_migrated: int
    waste_bytes: int
    rolled_back: bool


@dataclass(frozen=True)
class Decision:
    migrate: bool
    donor: PoolId | None = None

    @property
    def propagate(self) -> bool:
        return not self.migrate


def migration_transfer(donor_stride: int, recipient_stride: int,
                       donor_pages: int) -> tuple[int, int, int]:
    """Bytes freed, whole recipient pages gained, and waste for one step.

    The freed bytes are donor_pages * donor_stride; whatever does not fill a
    whole recipient page is waste, so freed == gained_bytes + waste exactly.
    """
    freed = donor_pages * donor_stride
    gained = freed // recipient_stride
    waste = freed % recipient_stride
    return freed, gained, waste


def update_pressure(state: PressureState, kv_free: float, ssm_free: float,
                    threshold_low: float) -> PressureState:
    """Advance the diagnostic pressure label from per-pool free fractions.

    Entry uses strict < threshold_low; recovery fires once the pressured
    pool's free fraction is back at or above the threshold.
    """
    if state is PressureState.KV_PRESSURED:
        if kv_free >= threshold_low:
            state = PressureState.BALANCED
        else:
            return state
    elif state is PressureState.SSM_PRESSURED:
        if ssm_free >= threshold_low:
            state = PressureState.BALANCED
        else:
            return state
    if state is PressureState.BALANCED:
        if kv_free < threshold_low:
            return PressureState.KV_PRESSURED
        if ssm_free < threshold_low:
            return PressureState.SSM_PRESSURED
    return state


class Rebalancer:
    """Owns the pressure label, throttle, and migration mechanics for one allocator."""

    def __init__(self, threshold_low: float, threshold_high: float,
                 migration_batch_size: int, min_rebalance_interval_ops: int):
        self.threshold_low = threshold_low
        self.threshold_high = threshold_high
        self.migration_batch_size = migration_batch_size
        self.min_interval = min_rebalance_interval_ops
        self.throttle = ThrottleState()
        self.state = PressureState.BALANCED
        self.events: list[RebalanceEvent] = []

    def note_op(self) -> None:
        self.throttle.note_op()

    def observe(self, kv_free: float, ssm_free: float) -> None:
        self.state = update_pressure(self.state, kv_free, ssm_free,
                                     self.threshold_low)

    def on_capacity_error(self, err: CapacityError, kv_free: float,
                          ssm_free: float) -> Decision:
        """Migrate-or-propagate decision, taken only inside the error handler.

        Eligibility is a donor-side check: the non-failing pool must hold a
        free fraction strictly above threshold_high, and the logical-op
        throttle must have expired.
        """
        donor = PoolId(err.pool).other()
        donor_free = ssm_free if donor is PoolId.SSM else kv_free
        if donor_free <= self.threshold_high:
            return Decision(migrate=False)
        last = self.throttle.last_rebalance_op
        if last is not None and self.throttle.op_counter - last < self.min_interval:
            return Decision(migrate=False)
        return Decision(migrate=True, donor=donor)

    def migrate(self, donor_store: BackingStore, recipient_store: BackingStore,
                table: VirtualPageTable | None,
                max_pages: int | None = None) -> RebalanceEvent:
        """Move up to one batch of capacity from donor to recipient.

        Partial batches are taken when the donor has fewer free pages than
        the batch size (callers may cap further via max_pages, e.g. to keep
        reservation-backed pages out of the donor set); a zero-page donor or
        a refused resize produces a rolled-back event and leaves all state
        untouched.
        """
        at_op = self.throttle.op_counter
        donor = donor_store.pool
        recipient = recipient_store.pool
        pages = min(self.migration_batch_size, donor_store.free_count)
        if max_pages is not None:
            pages = min(pages, max(0, max_pages))
        freed, gained, waste = migration_transfer(
            donor_store.stride, recipient_store.stride, pages)

        snap_donor = donor_store.snapshot()
        snap_recipient = recipient_store.snapshot()
        snap_table = table.snapshot() if table is not None else None

        self.state = PressureState.REBALANCING
        try:
            if pages == 0:
                raise ResizeRefusedError(f"{donor.name} has no free pages to donate")
            remaps = donor_store.resize_capacity(-pages)
            if table is not None:
                for old_idx, new_idx in remaps:
                    table.remap_physical(donor, old_idx, new_idx)
            if gained > 0:
                recipient_store.resize_capacity(gained)
        except ResizeRefusedError:
            donor_store.restore(snap_donor)
            recipient_store.restore(snap_recipient)
            if table is not None and snap_table is not None:
                table.restore(snap_table)
            event = RebalanceEvent(at_op, donor, recipient, pages, gained,
                                   freed, waste, rolled_back=True)
            self.events.append(event)
            self.state = PressureState.BALANCED
            return event

        self.throttle.last_rebalance_op = self.throttle.op_counter
        event = RebalanceEvent(at_op, donor, recipient, pages, gained,
                               freed, waste, rolled_back=False)
        self.events.append(event)
        self.state = PressureState.BALANCED
        return event
