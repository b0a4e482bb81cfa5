"""Pressure machine, migrate/propagate gating, transfer math, and rollback."""



from avmp.errors import CapacityError
from avmp.handles import PoolId, VirtualPageTable
from avmp.rebalancer import (
    PressureState,
    Rebalancer,
    ThrottleState,
    migration_transfer,
    update_pressure,
)
from avmp.rng import Pcg32
from avmp.stores import BackingStore, PoolGeometry


def test_note_op_counts():
    t = ThrottleState()
    t.note_op()
    assert t.op_counter == 1
    for _ in range(999):
        t.note_op()
    assert t.op_counter == 1000


def test_counter_survives_large_values():
    t = ThrottleState(op_counter=2**63 - 5)
    t.note_op()
    assert t.op_counter == 2**63 - 4


def test_pressure_entry_and_boundary():
    b = PressureState.BALANCED
    assert update_pressure(b, 0.03, 0.5, 0.05) is PressureState.KV_PRESSURED
    # boundary is strict: equal to the threshold stays balanced
    assert update_pressure(b, 0.05, 0.5, 0.05) is PressureState.BALANCED
    assert update_pressure(b, 0.5, 0.5, 0.05) is PressureState.BALANCED
    assert update_pressure(b, 0.5, 0.01, 0.05) is PressureState.SSM_PRESSURED


def test_pressure_recovery():
    state = update_pressure(PressureState.BALANCED, 0.01, 0.9, 0.05)
    assert state is PressureState.KV_PRESSURED
    assert update_pressure(state, 0.02, 0.9, 0.05) is PressureState.KV_PRESSURED
    assert update_pressure(state, 0.05, 0.9, 0.05) is PressureState.BALANCED


def _rebalancer(**kw):
    args = dict(threshold_low=0.05, threshold_high=0.30,
                migration_batch_size=128, min_rebalance_interval_ops=1000)
    args.update(kw)
    return Rebalancer(**args)


def _kv_error():
    return CapacityError(PoolId.KV, 4, 0)


def test_decision_migrate_when_donor_slack():
    reb = _rebalancer()
    decision = reb.on_capacity_error(_kv_error(), kv_free=0.0, ssm_free=0.45)
    assert decision.migrate and decision.donor is PoolId.SSM


def test_decision_propagate_when_donor_tight():
    reb = _rebalancer()
    assert reb.on_capacity_error(_kv_error(), 0.0, 0.10).propagate
    # boundary: exactly threshold_high is not "greater than"
    assert reb.on_capacity_error(_kv_error(), 0.0, 0.30).propagate


def test_decision_throttled():
    reb = _rebalancer()
    reb.throttle.last_rebalance_op = 0
    for _ in range(999):
        reb.note_op()
    assert reb.on_capacity_error(_kv_error(), 0.0, 0.9).propagate
    reb.note_op()
    assert reb.on_capacity_error(_kv_error(), 0.0, 0.9).migrate


def test_first_migration_unthrottled():
    reb = _rebalancer()
    assert reb.throttle.last_rebalance_op is None
    assert reb.on_capacity_error(_kv_error(), 0.0, 0.9).migrate


def test_transfer_examples():
    # 128 blocks of 10240 B into 65536 B pages: exact fit
    assert migration_transfer(10240, 65536, 128) == (1_310_720, 20, 0)
    # a single block cannot fill one page: all waste
    assert migration_transfer(10240, 65536, 1) == (10240, 0, 10240)


def test_transfer_identities_random_triples():
    rng = Pcg32(17, "transfer")
    for _ in range(100_000):
        donor = 16 * rng.randint(1, 8192)
        recipient = 16 * rng.randint(1, 8192)
        pages = rng.randint(0, 512)
        freed, gained, waste = migration_transfer(donor, recipient, pages)
        assert freed == pages * donor
        assert freed == gained * recipient + waste
        assert 0 <= waste < recipient


def _pools(kv_initial=8, kv_max=32, ssm_initial=512, ssm_max=512):
    kv = BackingStore(PoolGeometry(PoolId.KV, 65536, kv_initial, kv_max))
    ssm = BackingStore(PoolGeometry(PoolId.SSM, 10240, ssm_initial, ssm_max))
    return kv, ssm


def test_migrate_moves_capacity():
    kv, ssm = _pools()
    table = VirtualPageTable(kv.stride, ssm.stride)
    reb = _rebalancer()
    event = reb.migrate(donor_store=ssm, recipient_store=kv, table=table)
    assert not event.rolled_back
    assert event.donor_pages_freed == 128
    assert event.recipient_pages_gained == 20
    assert event.waste_bytes == 0
    assert ssm.capacity_pages == 512 - 128
    assert kv.capacity_pages == 8 + 20
    assert reb.throttle.last_rebalance_op == reb.throttle.op_counter


def test_migrate_partial_batch():
    kv, ssm = _pools(ssm_initial=64, ssm_max=64)
    reb = _rebalancer()
    event = reb.migrate(ssm, kv, table=None)
    assert event.donor_pages_freed == 64
    assert event.recipient_pages_gained == 10
    assert event.waste_bytes == 64 * 10240 - 10 * 65536


def test_migrate_respects_max_pages_cap():
    kv, ssm = _pools()
    reb = _rebalancer()
    event = reb.migrate(ssm, kv, table=None, max_pages=32)
    assert event.donor_pages_freed == 32


def test_migrate_zero_free_donor_rolls_back():
    kv, ssm = _pools(ssm_initial=8, ssm_max=8)
    ssm.alloc_pages(8)
    reb = _rebalancer()
    before = (kv.capacity_pages, ssm.capacity_pages)
    event = reb.migrate(ssm, kv, table=None)
    assert event.rolled_back
    assert (kv.capacity_pages, ssm.capacity_pages) == before
    assert reb.throttle.last_rebalance_op is None


def test_migrate_refused_grow_rolls_back_everything():
    # recipient at max: shrink succeeds, grow refuses, all state restored
    kv, ssm = _pools(kv_initial=32, kv_max=32)
    table = VirtualPageTable(kv.stride, ssm.stride)
    idx = ssm.alloc_pages(500)   # live pages high in the donor
    handles = [table.insert(PoolId.SSM, i) for i in idx]
    reb = _rebalancer()
    snapshot_free = ssm.free_indices()
    event = reb.migrate(ssm, kv, table=table)
    assert event.rolled_back
    assert ssm.capacity_pages == 512
    assert kv.capacity_pages == 32
    assert ssm.free_indices() == snapshot_free
    # page-table remaps undone: every handle resolves to its original index
    for handle, phys in zip(handles, idx):
        assert table.resolve(handle).page_offset == phys * ssm.stride
    assert reb.throttle.last_rebalance_op is None


def test_rollback_differential_against_untouched_clone():
    """A rolled-back migration leaves behavior identical to never migrating."""
    def build():
        kv, ssm = _pools(kv_initial=32, kv_max=32)
        ssm.alloc_pages(300)
        return kv, ssm

    kv_a, ssm_a = build()
    reb = _rebalancer()
    event = reb.migrate(ssm_a, kv_a, table=None)
    assert event.rolled_back

    kv_b, ssm_b = build()
    ops = []
    for store_a, store_b in ((kv_a, kv_b), (ssm_a, ssm_b)):
        got_a = store_a.alloc_pages(3)
        got_b = store_b.alloc_pages(3)
        ops.append((got_a, got_b))
        assert got_a == got_b
        assert store_a.free_indices() == store_b.free_indices()


def test_migrate_updates_table_remaps():
    kv, ssm = _pools()
    table = VirtualPageTable(kv.stride, ssm.stride)
    # occupy the donor's high end so the shrink must remap
    idx = ssm.alloc_pages(512)
    handles = {i: table.insert(PoolId.SSM, i) for i in idx}
    ssm.free_pages(list(range(0, 384)))
    reb = _rebalancer()
    event = reb.migrate(ssm, kv, table=table)
    assert not event.rolled_back
    assert ssm.capacity_pages == 384
    for phys in range(384, 512):
        loc = table.resolve(handles[phys])
        assert loc.page_offset < 384 * ssm.stride


def test_static_emits_no_events():
    reb = _rebalancer()
    assert reb.events == []
