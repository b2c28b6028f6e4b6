"""Fixed-period, budget-based memory bandwidth regulator.

Each regulation domain gets ``budget`` memory accesses per period. In
per-bank mode the budget applies independently to every DRAM bank; in
all-bank mode a single counter covers the whole memory. Exhausted budgets
set bits in a domain x bank throttle matrix that the LLC consults before
letting a miss reach memory.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

from bankreg.errors import ContractViolation

PER_BANK = "per-bank"
ALL_BANK = "all-bank"


@dataclass
class RegulatorConfig:
    mode: str = PER_BANK
    period_cycles: int = 1_000_000
    budgets: Sequence[int] = (0, 828)
    n_banks: int = 8
    regulated: Sequence[bool] = (False, True)
    count_writebacks: bool = True

    def __post_init__(self):
        if self.mode not in (PER_BANK, ALL_BANK):
            raise ValueError(f"unknown regulation mode {self.mode!r}")
        if self.period_cycles < 1:
            raise ValueError("period_cycles must be >= 1")
        if len(self.budgets) != len(self.regulated):
            raise ValueError("budgets and regulated must have one entry per domain")
        if any(b < 0 for b in self.budgets):
            raise ValueError("budgets must be >= 0")
        self.budgets = [int(b) for b in self.budgets]
        self.regulated = [bool(r) for r in self.regulated]

    @property
    def n_domains(self) -> int:
        return len(self.budgets)


class ThrottleMatrix:
    """D x N_bank throttle bits, one int bitmask per domain."""

    def __init__(self, n_domains: int, n_banks: int):
        self.n_banks = n_banks
        self.full = (1 << n_banks) - 1
        self.masks = [0] * n_domains

    def is_set(self, domain: int, bank: int) -> bool:
        return bool(self.masks[domain] >> bank & 1)

    def set(self, domain: int, bank: int) -> None:
        self.masks[domain] |= 1 << bank

    def set_row(self, domain: int) -> None:
        self.masks[domain] = self.full

    def clear_row(self, domain: int) -> None:
        self.masks[domain] = 0

    def any(self) -> bool:
        return any(self.masks)

    def bits(self) -> list[list[int]]:
        return [[m >> b & 1 for b in range(self.n_banks)] for m in self.masks]


class Regulator:
    def __init__(self, cfg: RegulatorConfig, start_cycle: int = 0):
        self.cfg = cfg
        D, B = cfg.n_domains, cfg.n_banks
        self.throttle = ThrottleMatrix(D, B)
        self.per_bank = cfg.mode == PER_BANK
        self.counts = [[0] * B for _ in range(D)] if self.per_bank else [0] * D
        # Period boundaries sit on absolute multiples of P.
        self.period_start = start_cycle - start_cycle % cfg.period_cycles
        self.issued = [0] * D
        self.throttle_cycles = [0] * D
        self._throttled_since: list[int | None] = [None] * D
        self.period_log: list[list[list[int]]] | None = None
        self._now = start_cycle
        self._apply_zero_budgets()

    def _apply_zero_budgets(self) -> None:
        for d, (budget, reg) in enumerate(zip(self.cfg.budgets, self.cfg.regulated)):
            if reg and budget == 0:
                self.throttle.set_row(d)
                self._mark(d, self.period_start)

    def _mark(self, d: int, now: int) -> None:
        if self._throttled_since[d] is None:
            self._throttled_since[d] = now

    def _unmark(self, d: int, now: int) -> None:
        since = self._throttled_since[d]
        if since is not None:
            self.throttle_cycles[d] += now - since
            self._throttled_since[d] = None

    @property
    def next_boundary(self) -> int:
        return self.period_start + self.cfg.period_cycles

    def is_throttled(self, domain: int, bank: int) -> bool:
        return bool(self.throttle.masks[domain] >> bank & 1)

    def on_issue(self, domain: int, bank: int, now: int) -> None:
        """Account one memory access from ``domain`` to ``bank``."""
        if not self.cfg.regulated[domain]:
            self.issued[domain] += 1
            return
        if self.throttle.masks[domain] >> bank & 1:
            raise ContractViolation(f"issue from throttled domain {domain} to bank {bank}")
        self.issued[domain] += 1
        budget = self.cfg.budgets[domain]
        if self.per_bank:
            row = self.counts[domain]
            row[bank] += 1
            if row[bank] >= budget:
                self.throttle.set(domain, bank)
                self._mark(domain, now)
        else:
            self.counts[domain] += 1
            if self.counts[domain] >= budget:
                self.throttle.set_row(domain)
                self._mark(domain, now)

    def on_tick(self, now: int) -> bool:
        """Replenish budgets at period boundaries; True if any throttle bit cleared."""
        self._now = now
        P = self.cfg.period_cycles
        if now - self.period_start < P:
            return False
        boundary = now - (now - self.period_start) % P
        if self.period_log is not None:
            self.period_log.append(self.snapshot_counts())
        self.period_start = boundary
        cleared = False
        for d in range(self.cfg.n_domains):
            if self.per_bank:
                self.counts[d] = [0] * self.cfg.n_banks
            else:
                self.counts[d] = 0
            if self.cfg.regulated[d] and self.throttle.masks[d]:
                self.throttle.clear_row(d)
                self._unmark(d, boundary)
                cleared = True
        self._apply_zero_budgets()
        return cleared

    def snapshot_counts(self) -> list[list[int]]:
        if self.per_bank:
            return [list(r) for r in self.counts]
        return [[c] for c in self.counts]

    def finish(self, now: int) -> None:
        for d in range(self.cfg.n_domains):
            self._unmark(d, now)


def budget_from_bandwidth(bw_mbps: float, period_cycles: int, freq_hz: float = 1e9, granularity: int = 64) -> int:
    """Accesses per period that yield ``bw_mbps`` (MB/s, 10^6 bytes/s); at least 1."""
    if bw_mbps <= 0 or period_cycles <= 0 or freq_hz <= 0 or granularity <= 0:
        raise ValueError("all inputs must be positive")
    n = round(bw_mbps * 1e6 * period_cycles / (granularity * freq_hz))
    if n < 1:
        warnings.warn(
            f"{bw_mbps} MB/s over {period_cycles} cycles is below one access per period; "
            "clamping the budget to 1",
            RuntimeWarning,
            stacklevel=2,
        )
        return 1
    return int(n)


def bandwidth_from_budget(n_acc: int, period_cycles: int, freq_hz: float = 1e9, granularity: int = 64) -> float:
    """Per-bank bandwidth in MB/s granted by ``n_acc`` accesses per period."""
    return n_acc / period_cycles * granularity * freq_hz / 1e6


def max_bandwidth(per_bank_budget_mbps: float, n_banks: int) -> float:
    if per_bank_budget_mbps <= 0 or n_banks <= 0:
        raise ValueError("inputs must be positive")
    return per_bank_budget_mbps * n_banks
