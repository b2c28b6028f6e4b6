import pytest

from bankreg.bankmap import RowColumnLayout, platform_map
from bankreg.cachefront import BLOCKED, HIT, MISS, LlcConfig, SharedLLC, TaggingConfig
from bankreg.regulator import ThrottleMatrix

FS = platform_map("firesim")
LAY = RowColumnLayout()


def make(cfg=None, c2d=(0, 1), n_domains=2, gate=True):
    return SharedLLC(cfg or LlcConfig(), TaggingConfig(list(c2d), n_domains), FS.bank_of, LAY.row_of, 0, gate)


def complete(llc, now=100):
    """Issue and fill every pending miss immediately."""
    for cb in range(llc.cfg.n_cache_banks):
        while True:
            m = llc.arbiter_select(cb, None, now)
            if m is None:
                break
            llc.mark_issued(m)
            if not m.request.is_write:
                llc.fill(m.request, now)


def test_defaults_match_simulated_soc():
    cfg = LlcConfig()
    assert (cfg.size, cfg.associativity, cfg.n_cache_banks, cfg.mshrs_per_bank) == (1 << 20, 16, 2, 27)


def test_miss_then_hit():
    llc = make()
    assert llc.access(0, 0x1000, False, 0) == MISS
    assert llc.access(0, 0x1000, False, 1) == MISS  # merged while in flight
    complete(llc)
    assert llc.access(0, 0x1000, False, 200) == HIT
    assert llc.counters[0].merged == 1


def test_throttled_bank_blocks_miss():
    llc = make()
    t = ThrottleMatrix(2, 8)
    bank = FS.bank_of(0x2000)
    t.set(1, bank)
    assert llc.access(1, 0x2000, False, 0, t) == BLOCKED
    assert llc.access(0, 0x2000, False, 0, t) == MISS
    other = next(a for a in range(0, 1 << 16, 64) if FS.bank_of(a) != bank)
    assert llc.access(1, other, False, 0, t) == MISS


def test_arbiter_skips_throttled_and_round_robins():
    llc = make(LlcConfig(hit_latency=0))
    t = ThrottleMatrix(2, 8)
    # Two misses in cache bank 0: domain 1 to DRAM bank 0, domain 0 to bank 1.
    a = 0x0
    b = next(x for x in range(0, 1 << 20, 128) if FS.bank_of(x) == 1)
    llc.access(1, a, False, 0)
    llc.access(0, b, False, 0)
    t.set(1, 0)
    m = llc.arbiter_select(0, t, 0)
    assert m.request.paddr == b
    t.clear_row(1)
    assert llc.arbiter_select(0, None, 0).request.paddr == a
    assert llc.arbiter_select(0, None, 0).request.paddr == b


def test_all_throttled_none_selected():
    llc = make(LlcConfig(hit_latency=0))
    t = ThrottleMatrix(2, 8)
    llc.access(1, 0x0, False, 0)
    t.set_row(1)
    assert llc.arbiter_select(0, t, 0) is None


def test_partitions_isolate_domains():
    cfg = LlcConfig(size=64 * 16 * 2 * 8)  # 8 sets per cache bank
    def misses(with_corunner):
        llc = make(cfg)
        lines = [i * 128 for i in range(64)]
        for rnd in range(3):
            for a in lines:
                llc.access(0, a, False, rnd)
                if with_corunner:
                    llc.access(1, (1 << 24) + a * 3, True, rnd)
                complete(llc)
        return llc.counters[0].misses
    assert misses(False) == misses(True)


def test_dirty_eviction_creates_writeback():
    cfg = LlcConfig(size=64 * 1 * 2 * 2, associativity=1)  # 2 sets per cache bank, direct mapped
    llc = make(cfg, c2d=(0,), n_domains=1)
    stride = 64 * 2 * 2
    llc.access(0, 0, True, 0)
    complete(llc)
    llc.access(0, stride, False, 1)
    assert llc.counters[0].writebacks == 1
    kinds = sorted(m.request.is_write for m in llc.unissued[0])
    assert kinds == [False, True]


def test_mshr_exhaustion_blocks():
    llc = make(LlcConfig(mshrs_per_bank=2))
    assert llc.access(0, 0, False, 0) == MISS
    assert llc.access(0, 128, False, 0) == MISS
    assert llc.access(0, 256, False, 0) == BLOCKED


def test_warm_fills_without_traffic():
    llc = make()
    n = llc.warm(1, [i * 64 for i in range(100)], dirty=True)
    assert n == 100
    assert not any(llc.unissued)
    assert llc.access(1, 0, False, 0) == HIT


@pytest.mark.parametrize("kw", [{"hit_latency": -1}, {"n_cache_banks": 3}, {"mshrs_per_bank": 0}, {"set_partition": {0: (0, 600)}}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        LlcConfig(**kw)
