import pytest
from hypothesis import given, settings, strategies as st

from bankreg.dramcore import DramConfig, DramController, MemRequest, guaranteed_bw, guaranteed_bw_ns, run_trace
from bankreg.errors import ContractViolation


def rd(i, bank, row, write=False):
    return MemRequest(i, 0, 0, write, 0, bank, row)


def drain(ctl, limit=100_000):
    done = []
    while not ctl.idle:
        now = int(ctl.next_event())
        assert now < limit
        done += ctl.tick(now)
    return done


class Recorder:
    def __init__(self):
        self.cmds = []

    def __call__(self, cycle, command, bank, row, req_id, mode):
        self.cmds.append((cycle, command, bank, row, req_id, mode))


def test_guaranteed_bw_values():
    # Independent arithmetic: 64 bytes per row cycle.
    assert round(64 / 47e-9 / 1e6, 1) == 1361.7
    assert round(guaranteed_bw(DramConfig(tRC=47)), 1) == 1361.7
    assert round(guaranteed_bw(DramConfig(tRC=47))) == 1362
    assert round(guaranteed_bw_ns(60.0), 1) == 1066.7
    assert guaranteed_bw_ns(64.0) == pytest.approx(1000.0)
    with pytest.raises(ValueError):
        guaranteed_bw_ns(0)


def test_default_timings():
    cfg = DramConfig()
    assert (cfg.tRC, cfg.tRCD, cfg.tRP, cfg.tCL, cfg.n_banks) == (47, 14, 14, 14, 8)
    assert cfg.tRAS + cfg.tRP == cfg.tRC


@pytest.mark.parametrize("kw", [{"tRC": 20}, {"n_banks": 3}, {"write_low_watermark": 30}, {"tCL": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        DramConfig(**kw)


def test_queue_capacity():
    ctl = DramController()
    assert ctl.enqueue(rd(0, 0, 0), 0)
    for i in range(32):
        assert ctl.enqueue(rd(100 + i, i % 8, i, True), 0)
    assert not ctl.can_accept(True)
    assert not ctl.enqueue(rd(200, 0, 99, True), 0)
    assert ctl.can_accept(False)


def test_same_bank_conflict_spaced_by_trc():
    cfg = DramConfig()
    rec = Recorder()
    ctl = DramController(cfg, rec)
    a, b = rd(0, 0, 1), rd(1, 0, 2)
    ctl.enqueue(a, 0)
    ctl.enqueue(b, 0)
    drain(ctl)
    acts = [x for x in rec.cmds if x[1] == "ACT"]
    assert [x[4] for x in acts] == [0, 1]
    assert acts[1][0] - acts[0][0] >= cfg.tRC
    assert b.complete_cycle - acts[0][0] >= cfg.tRC


def test_different_banks_overlap():
    cfg = DramConfig()
    ctl = DramController(cfg)
    a, b = rd(0, 0, 1), rd(1, 1, 2)
    ctl.enqueue(a, 0)
    ctl.enqueue(b, 0)
    drain(ctl)
    single = DramController(cfg)
    c, d = rd(0, 0, 1), rd(1, 0, 2)
    single.enqueue(c, 0)
    single.enqueue(d, 0)
    drain(single)
    assert max(a.complete_cycle, b.complete_cycle) < 2 * cfg.tRC
    assert max(a.complete_cycle, b.complete_cycle) < d.complete_cycle


def test_read_waits_for_write_drain():
    cfg = DramConfig()
    rec = Recorder()
    ctl = DramController(cfg, rec)
    writes = [rd(i, i % 8, 100 + i, True) for i in range(cfg.write_high_watermark)]
    for w in writes:
        ctl.enqueue(w, 0)
    now = int(ctl.next_event())
    ctl.tick(now)
    assert ctl.write_mode
    late = rd(999, 7, 5)
    ctl.enqueue(late, now)
    drain(ctl)
    wr_cycles = sorted(w.complete_cycle - cfg.tBURST for w in writes)
    # The read's CAS comes only after the queue fell to the low watermark.
    read_cas = next(x[0] for x in rec.cmds if x[1] == "RD")
    n_before = sum(1 for t in wr_cycles if t < read_cas)
    assert n_before >= cfg.write_high_watermark - cfg.write_low_watermark


def test_frfcfs_prefers_row_hit():
    ctl = DramController()
    first = rd(0, 2, 7)
    ctl.enqueue(first, 0)
    drain(ctl)
    now = ctl.now
    miss_a, hit_b = rd(1, 2, 9), rd(2, 2, 7)
    ctl.enqueue(miss_a, now)
    ctl.enqueue(hit_b, now + 1)
    cmd = ctl.pick_next_command(now + 50)
    assert cmd.kind == "RD" and cmd.request is hit_b


def test_frfcfs_oldest_hit_first():
    ctl = DramController()
    ctl.enqueue(rd(0, 2, 7), 0)
    drain(ctl)
    now = ctl.now
    a, b = rd(1, 2, 7), rd(2, 2, 7)
    ctl.enqueue(a, now)
    ctl.enqueue(b, now + 1)
    assert ctl.pick_next_command(now + 50).request is a


def test_single_request_selected():
    ctl = DramController()
    r = rd(0, 3, 3)
    ctl.enqueue(r, 0)
    cmd = ctl.pick_next_command(1)
    assert cmd.kind == "ACT" and cmd.request is r


def test_tick_must_advance():
    ctl = DramController()
    ctl.tick(5)
    with pytest.raises(ContractViolation):
        ctl.tick(5)


def test_bank_out_of_range():
    with pytest.raises(ContractViolation):
        DramController().enqueue(rd(0, 8, 0), 0)


def test_write_batching_reduces_switches():
    import random

    rng = random.Random(4)
    reqs = []
    for i in range(600):
        reqs.append((i * 6, MemRequest(i, 0, 0, rng.random() < 0.5, 0, rng.randrange(8), rng.randrange(64))))

    def switches(cfg):
        fresh = [(t, MemRequest(r.id, 0, 0, r.is_write, 0, r.bank, r.row)) for t, r in reqs]
        ctl, done = run_trace(fresh, cfg)
        assert len(done) == len(reqs)
        return ctl.stats.bus_mode_switches

    batched = switches(DramConfig())
    unbatched = switches(DramConfig(write_batching=False))
    assert unbatched >= 2 * batched


# -- randomized invariants ---------------------------------------------------

request_lists = st.lists(
    st.tuples(st.integers(0, 400), st.integers(0, 7), st.integers(0, 5), st.booleans()),
    min_size=1,
    max_size=40,
)
configs = st.sampled_from(
    [
        DramConfig(),
        DramConfig(write_high_watermark=4, write_low_watermark=1, read_q_depth=4, write_q_depth=6),
        DramConfig(n_banks=8, tRC=60, tRCD=20, tRP=20, tRRD=0, tFAW=0),
        DramConfig(n_banks=4, write_batching=False),
    ]
)


def check_invariants(cfg, reqs, rec):
    by_id = {r.id: r for _, r in reqs}
    cmds = rec.cmds
    # tRC between ACTs of one bank; tRRD and tFAW across banks.
    acts = [c for c in cmds if c[1] == "ACT"]
    last = {}
    for t, _, bank, *_ in acts:
        if bank in last:
            assert t - last[bank] >= cfg.tRC
        last[bank] = t
    times = [a[0] for a in acts]
    for x, y in zip(times, times[1:]):
        assert y - x >= cfg.tRRD
    for i in range(4, len(times)):
        assert times[i] - times[i - 4] >= cfg.tFAW
    # CAS only to the open row; every request served exactly once.
    cas = {}
    for t, kind, bank, row, rid, mode in cmds:
        if kind in ("RD", "WR"):
            assert rid not in cas
            cas[rid] = t
            assert (kind == "WR") == by_id[rid].is_write
            assert (mode == "W") == by_id[rid].is_write
    assert set(cas) == set(by_id)
    # FR-FCFS within one bank and queue: a younger request may overtake an
    # older pending one only as a row hit, and never to the same row.
    open_row = {}
    for t, kind, bank, row, rid, mode in cmds:
        me = by_id[rid]
        key = (me.enqueue_cycle, me.id)
        pending_older = [
            r for r in by_id.values()
            if r.bank == bank and r.is_write == me.is_write and r.enqueue_cycle < t
            and cas[r.id] > t and (r.enqueue_cycle, r.id) < key
        ]
        if kind in ("RD", "WR"):
            assert all(r.row != row for r in pending_older)
        elif kind == "PRE":
            assert not [r for r in pending_older if r.row == open_row.get(bank)]
            assert not pending_older
            open_row[bank] = None
        else:
            assert not pending_older
            open_row[bank] = row


@settings(max_examples=1000)
@given(request_lists, configs)
def test_dram_trace_invariants(spec, cfg):
    reqs = [(t, MemRequest(i, 0, 0, w, 0, b % cfg.n_banks, row)) for i, (t, b, row, w) in enumerate(spec)]
    rec = Recorder()
    ctl, done = run_trace(reqs, cfg, rec)
    assert len(done) == len(reqs)
    for _, r in reqs:
        assert r.complete_cycle > r.enqueue_cycle >= 0
        if not r.is_write:
            assert r.complete_cycle - r.enqueue_cycle >= cfg.tCL + cfg.tBURST
    check_invariants(cfg, reqs, rec)
