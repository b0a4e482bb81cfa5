"""Discrete-tick serving simulation for one benchmark cell.

Each tick: admit the head of the waiting queue (strict FIFO, at most one
failed attempt per tick), advance every active sequence one decode token,
then release completions.  Out-of-memory events are data: a failed admission
re-queues with a fixed backoff, a failed decode extension stalls the sequence
one backoff window without losing state.

Wall-clock time is split into four buckets (service, OOM retry, migration,
idle); everything that decides simulation outcomes runs on logical ticks and
logical operation counts, so the event-deterministic result fields reproduce
byte-identically across runs, hosts, and parallelism settings.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field, replace

from avmp.allocators import Allocator, AllocatorConfig, new_allocator
from avmp.errors import CapacityError, LogicError
from avmp.handles import PoolId
from avmp.models import ModelSpec
from avmp.phases import OOM_RETRY, PhaseClock
from avmp.workloads import Request, WorkloadSpec, generate

SCHEMA_VERSION = "1.3.0"
TICK_HORIZON = 1_000_000


@dataclass(frozen=True)
class CellConfig:
    """Everything that determines one cell's event-deterministic outputs."""

    variant_label: str
    allocator: AllocatorConfig
    workload: WorkloadSpec
    model: ModelSpec
    budget_bytes: int
    seed: int
    retry_backoff_ticks: int = 5
    stall_guard_ticks: int = 400
    reserve_decode_growth: bool = True

    def to_dict(self) -> dict:
        return {
            "variant_label": self.variant_label,
            "allocator": self.allocator.to_dict(),
            "workload": self.workload.to_dict(),
            "model": self.model.to_dict(),
            "budget_bytes": self.budget_bytes,
            "seed": self.seed,
            "retry_backoff_ticks": self.retry_backoff_ticks,
            "stall_guard_ticks": self.stall_guard_ticks,
            "reserve_decode_growth": self.reserve_decode_growth,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CellConfig":
        return cls(
            variant_label=data["variant_label"],
            allocator=AllocatorConfig.from_dict(data["allocator"]),
            workload=WorkloadSpec.from_dict(data["workload"]),
            model=ModelSpec.from_dict(data["model"]),
            budget_bytes=int(data["budget_bytes"]),
            seed=int(data["seed"]),
            retry_backoff_ticks=int(data.get("retry_backoff_ticks", 5)),
            stall_guard_ticks=int(data.get("stall_guard_ticks", 400)),
            reserve_decode_growth=bool(data.get("reserve_decode_growth", True)),
        )


@dataclass
class CellResult:
    """Per-cell metrics, split into deterministic and timing-dependent halves."""

    config: CellConfig
    # event-deterministic
    oom_count: int
    rebalance_count: int
    migrated_bytes: int
    waste_bytes: int
    effective_batch_size_p50: int
    completed_requests: int
    ticks_run: int
    # timing-dependent
    goodput: float
    time_to_first_oom_s: float | None
    phase: dict[str, float]
    peak_reserved_bytes: int
    schema_version: str = SCHEMA_VERSION
    # in-memory audit trail (not serialized in the result record)
    events: list = field(default_factory=list, repr=False)

    EVENT_FIELDS = ("oom_count", "rebalance_count", "migrated_bytes",
                    "waste_bytes", "effective_batch_size_p50",
                    "completed_requests", "ticks_run")

    def event_key(self) -> tuple:
        return tuple(getattr(self, name) for name in self.EVENT_FIELDS)

    def to_record(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "cell": self.config.to_dict(),
            "oom_count": self.oom_count,
            "rebalance_count": self.rebalance_count,
            "migrated_bytes": self.migrated_bytes,
            "waste_bytes": self.waste_bytes,
            "effective_batch_size_p50": self.effective_batch_size_p50,
            "completed_requests": self.completed_requests,
            "ticks_run": self.ticks_run,
            "goodput": self.goodput,
            "time_to_first_oom_s": self.time_to_first_oom_s,
            "phase": dict(self.phase),
            "peak_reserved_bytes": self.peak_reserved_bytes,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CellResult":
        return cls(
            config=CellConfig.from_dict(rec["cell"]),
            oom_count=int(rec["oom_count"]),
            rebalance_count=int(rec["rebalance_count"]),
            migrated_bytes=int(rec["migrated_bytes"]),
            waste_bytes=int(rec["waste_bytes"]),
            effective_batch_size_p50=int(rec["effective_batch_size_p50"]),
            completed_requests=int(rec["completed_requests"]),
            ticks_run=int(rec["ticks_run"]),
            goodput=float(rec["goodput"]),
            time_to_first_oom_s=(None if rec["time_to_first_oom_s"] is None
                                 else float(rec["time_to_first_oom_s"])),
            phase=dict(rec["phase"]),
            peak_reserved_bytes=int(rec["peak_reserved_bytes"]),
            schema_version=rec["schema_version"],
        )


def effective_batch_p50(samples: list[int]) -> int:
    """Lower median: element floor((n-1)/2) of the sorted sample list."""
    if not samples:
        raise LogicError("batch p50 of an empty sample list")
    ordered = sorted(samples)
    return ordered[(len(ordered) - 1) // 2]


@dataclass
class _ActiveSeq:
    req: Request
    decoded: int = 0
    stall_until: int = -1

    @property
    def total_tokens(self) -> int:
        return self.req.prompt_tokens + self.decoded


class _Admission:
    __slots__ = ("req", "eligible_tick", "attempted")

    def __init__(self, req: Request, eligible_tick: int):
        self.req = req
        self.eligible_tick = eligible_tick
        self.attempted = False


def _fits_at_max(alloc: Allocator, model: ModelSpec, req: Request) -> bool:
    """Whether the request's complete footprint could ever fit when run alone."""
    final_pages = model.kv_pages_for(req.prompt_tokens + req.gen_tokens)
    if alloc.config.variant.value == "padded_unified":
        pad = -(-model.ssm_block_bytes // model.kv_page_bytes)
        return final_pages + model.ssm_layers * pad <= alloc.max_pages(PoolId.KV)
    return (final_pages <= alloc.max_pages(PoolId.KV)
            and model.ssm_layers <= alloc.max_pages(PoolId.SSM))


def run_cell(cfg: CellConfig, trace_counts: list[int] | None = None) -> CellResult:
    """Drive the full request stream against one allocator instance."""
    workload = replace(cfg.workload, seed=cfg.seed)
    requests = generate(workload, trace_counts)
    clock = PhaseClock()
    alloc = new_allocator(cfg.allocator, cfg.budget_bytes, cfg.model, clock)
    backoff = cfg.retry_backoff_ticks
    # A wedged cell must wait out at least one full rebalance-throttle window
    # (retries keep the op counter moving) before the drain declares it dead.
    stall_guard = cfg.stall_guard_ticks

    wall_start = time.perf_counter()
    events: list[dict] = []
    oom_count = 0
    completed = 0
    first_oom_s: float | None = None
    batch_samples: list[int] = []

    arrivals = deque(requests)
    waiting: deque[_Admission] = deque()
    active: dict[int, _ActiveSeq] = {}
    tick = 0
    last_progress_tick = 0

    def note_oom(kind: str, req_id: int, t: int) -> None:
        nonlocal oom_count, first_oom_s
        oom_count += 1
        if first_oom_s is None:
            first_oom_s = time.perf_counter() - wall_start
        events.append({"type": "oom", "kind": kind, "req": req_id,
                       "tick": t, "op": alloc.op_counter})

    while (arrivals or waiting or active) and tick < TICK_HORIZON:
        progressed = False

        while arrivals and arrivals[0].arrival_tick <= tick:
            waiting.append(_Admission(arrivals.popleft(), 0))

        # Decode first: the running batch has priority over the waitlist, so
        # stalled extensions see freed pages before new admissions take them.
        done_ids = []
        for seq_id, seq in active.items():
            if seq.stall_until > tick:
                continue
            new_total = seq.req.prompt_tokens + seq.decoded + 1
            try:
                alloc.extend_decode(seq_id, new_total)
            except CapacityError:
                with clock.scope(OOM_RETRY):
                    note_oom("decode", seq_id, tick)
                    seq.stall_until = tick + backoff
                continue
            seq.decoded += 1
            progressed = True
            if seq.decoded >= seq.req.gen_tokens:
                done_ids.append(seq_id)
        for seq_id in done_ids:
            alloc.release(seq_id)
            del active[seq_id]
            completed += 1
            progressed = True

        # Strict FIFO admission: only the queue head may attempt, and a failed
        # attempt ends admissions for this tick.
        while waiting:
            head = waiting[0]
            if head.eligible_tick > tick:
                break
            total = (head.req.prompt_tokens + head.req.gen_tokens
                     if cfg.reserve_decode_growth else None)
            try:
                alloc.admit(head.req.req_id, head.req.prompt_tokens, total)
            except CapacityError:
                with clock.scope(OOM_RETRY):
                    note_oom("admit", head.req.req_id, tick)
                    if head.attempted and not _fits_at_max(alloc, cfg.model, head.req):
                        waiting.popleft()   # can never fit; reject permanently
                    else:
                        head.attempted = True
                        head.eligible_tick = tick + backoff
                break
            waiting.popleft()
            active[head.req.req_id] = _ActiveSeq(head.req)
            progressed = True

        batch_samples.append(len(active))

        if progressed:
            last_progress_tick = tick
        elif not active and not waiting:
            last_progress_tick = tick   # merely waiting for future arrivals
        elif tick - last_progress_tick > stall_guard:
            # Every stalled sequence and the queue head have retried and
            # failed with no capacity change since: the cell is wedged, so
            # drain early exactly as the tick-horizon drain would.
            break
        tick += 1

    # Horizon / wedge drain: release everything still live.
    for seq_id in list(active):
        alloc.release(seq_id)
    active.clear()

    wall_s = time.perf_counter() - wall_start
    clock.close(wall_s)

    rebalances = [e for e in alloc.rebalance_events if not e.rolled_back]
    for e in alloc.rebalance_events:
        events.append({"type": "rebalance", "at_op": e.at_op,
                       "donor": PoolId(e.donor).name,
                       "recipient": PoolId(e.recipient).name,
                       "donor_pages_freed": e.donor_pages_freed,
                       "recipient_pages_gained": e.recipient_pages_gained,
                       "bytes_migrated": e.bytes_migrated,
                       "waste_bytes": e.waste_bytes,
                       "rolled_back": e.rolled_back})
    for op in alloc.capacity_error_ops:
        events.append({"type": "capacity_error", "op": op})

    kv_reserved, ssm_reserved = alloc.reserved_bytes()
    return CellResult(
        config=cfg,
        oom_count=oom_count,
        rebalance_count=len(rebalances),
        migrated_bytes=sum(e.bytes_migrated for e in rebalances),
        waste_bytes=sum(e.waste_bytes for e in rebalances),
        effective_batch_size_p50=effective_batch_p50(batch_samples),
        completed_requests=completed,
        ticks_run=tick,
        goodput=(completed / wall_s) if wall_s > 0 else 0.0,
        time_to_first_oom_s=first_oom_s,
        phase=clock.as_dict(),
        peak_reserved_bytes=kv_reserved + ssm_reserved,
        events=events,
    )
