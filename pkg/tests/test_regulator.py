import warnings

import pytest
from hypothesis import given, settings, strategies as st

from bankreg.errors import ContractViolation
from bankreg.regulator import (
    ALL_BANK,
    PER_BANK,
    Regulator,
    RegulatorConfig,
    bandwidth_from_budget,
    budget_from_bandwidth,
    max_bandwidth,
)


def reg(mode, budget=2, P=100, banks=8):
    return Regulator(RegulatorConfig(mode=mode, period_cycles=P, budgets=[0, budget], n_banks=banks))


def test_budget_from_bandwidth_examples():
    # 53 MB/s over 1 ms in 64-byte accesses: 53e6 * 1e-3 / 64 = 828.125.
    assert 53e6 * 1e-3 / 64 == pytest.approx(828.125)
    assert budget_from_bandwidth(53, 1_000_000) == 828
    assert budget_from_bandwidth(64, 1_000_000) == 1000
    assert budget_from_bandwidth(64 * 1e3, 500) == 500  # G*f MB/s -> one access per cycle
    assert bandwidth_from_budget(1000, 1_000_000) == pytest.approx(64.0)


def test_budget_clamps_with_warning():
    with pytest.warns(RuntimeWarning):
        assert budget_from_bandwidth(0.001, 1000) == 1
    with pytest.raises(ValueError):
        budget_from_bandwidth(0, 1000)


def test_max_bandwidth():
    assert max_bandwidth(53, 8) == 424
    assert max_bandwidth(7.5, 1) == 7.5
    assert max_bandwidth(100, 16) == 1600
    with pytest.raises(ValueError):
        max_bandwidth(53, 0)


def test_per_bank_throttles_after_budget():
    r = reg(PER_BANK)
    r.on_issue(1, 3, 0)
    assert not r.is_throttled(1, 3)
    r.on_issue(1, 3, 1)
    assert r.is_throttled(1, 3)
    assert not r.is_throttled(1, 4)


def test_per_bank_separate_counters():
    r = reg(PER_BANK)
    r.on_issue(1, 3, 0)
    r.on_issue(1, 5, 1)
    assert not r.throttle.any()


def test_all_bank_asserts_whole_row():
    r = reg(ALL_BANK)
    r.on_issue(1, 3, 0)
    r.on_issue(1, 5, 1)
    assert all(r.is_throttled(1, b) for b in range(8))
    assert not r.is_throttled(0, 3)


def test_unregulated_domain_never_throttled():
    r = reg(PER_BANK)
    for i in range(50):
        r.on_issue(0, 0, i)
    assert not r.throttle.any()


def test_issue_while_throttled_is_contract_violation():
    r = reg(PER_BANK)
    r.on_issue(1, 3, 0)
    r.on_issue(1, 3, 1)
    with pytest.raises(ContractViolation):
        r.on_issue(1, 3, 2)


def test_replenish_at_boundary():
    r = reg(PER_BANK, P=100)
    r.on_issue(1, 3, 0)
    r.on_issue(1, 3, 10)
    assert not r.on_tick(50)
    assert r.is_throttled(1, 3)
    assert not r.on_tick(99)
    assert r.on_tick(100)
    assert not r.is_throttled(1, 3)
    assert r.throttle_cycles[1] == 90


def test_skipped_ticks_land_on_boundary():
    r = reg(ALL_BANK, P=100)
    r.on_issue(1, 0, 5)
    r.on_issue(1, 0, 6)
    r.on_tick(357)
    assert r.period_start == 300
    assert not r.throttle.any()


def test_zero_budget_blocks_from_start():
    r = reg(PER_BANK, budget=0)
    assert all(r.is_throttled(1, b) for b in range(8))
    r.on_tick(100)
    assert all(r.is_throttled(1, b) for b in range(8))


def test_config_validation():
    with pytest.raises(ValueError):
        RegulatorConfig(mode="bogus")
    with pytest.raises(ValueError):
        RegulatorConfig(budgets=[1], regulated=[True, False])
    with pytest.raises(ValueError):
        RegulatorConfig(period_cycles=0)


events = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 2), st.integers(0, 7)), min_size=1, max_size=200)


@settings(max_examples=1000)
@given(
    events,
    st.sampled_from([PER_BANK, ALL_BANK]),
    st.integers(0, 6),
    st.integers(1, 6),
    st.integers(20, 300),
)
def test_budget_enforced_on_random_traces(trace, mode, b1, b2, P):
    """A well-behaved issuer never exceeds a regulated budget within any period."""
    cfg = RegulatorConfig(mode=mode, period_cycles=P, budgets=[0, b1, b2], regulated=[False, True, True], n_banks=8)
    r = Regulator(cfg)
    now = 0
    granted: dict = {}
    for gap, d, bank in trace:
        now += gap
        r.on_tick(now)
        period = now // P
        if r.is_throttled(d, bank):
            with pytest.raises(ContractViolation):
                r.on_issue(d, bank, now)
            continue
        r.on_issue(d, bank, now)
        key = (period, d, bank if mode == PER_BANK else None)
        granted[key] = granted.get(key, 0) + 1
    for (period, d, _), n in granted.items():
        if d == 0:
            continue
        assert n <= cfg.budgets[d]
    # Domain 0 is unregulated and never throttled.
    assert not any(r.throttle.masks[0] >> b & 1 for b in range(8))
