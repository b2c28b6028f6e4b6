"""Shared last-level cache front end.

Requests arrive tagged with a regulation domain, look up a set-partitioned
cache with random replacement, and on a miss allocate an MSHR. A per-cache-bank
round-robin arbiter decides which MSHR issues to memory next, skipping any
whose (domain, DRAM bank) throttle bit is set.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from bankreg.dramcore import MemRequest

HIT = "hit"
MISS = "miss-allocated"
BLOCKED = "blocked"

ALLOCATED = "allocated"
ISSUED = "issued"
FILLING = "filling"


@dataclass
class TaggingConfig:
    core_to_domain: Sequence[int] = (0, 1, 1, 1)
    n_domains: int = 2

    def __post_init__(self):
        self.core_to_domain = [int(d) for d in self.core_to_domain]
        for core, d in enumerate(self.core_to_domain):
            if not 0 <= d < self.n_domains:
                raise ValueError(f"core {core} mapped to unknown domain {d}")

    def domain_of(self, core: int) -> int:
        return self.core_to_domain[core]


@dataclass
class LlcConfig:
    size: int = 1 << 20
    associativity: int = 16
    n_cache_banks: int = 2
    mshrs_per_bank: int = 27
    line_size: int = 64
    hit_latency: int = 20
    # Extra cycles between DRAM data return and the requesting core seeing it.
    refill_latency: int = 15
    # domain -> [lo, hi) set range inside every cache bank; None splits evenly.
    set_partition: dict[int, tuple[int, int]] | None = None

    def __post_init__(self):
        if self.hit_latency < 0 or self.refill_latency < 0:
            raise ValueError("latencies must be non-negative")
        if self.mshrs_per_bank < 1:
            raise ValueError("mshrs_per_bank must be >= 1")
        if self.n_cache_banks < 1 or self.n_cache_banks & (self.n_cache_banks - 1):
            raise ValueError("n_cache_banks must be a power of two")
        if self.sets_per_bank < 1:
            raise ValueError("cache too small for its geometry")
        if self.set_partition is not None:
            self.set_partition = {int(d): (int(lo), int(hi)) for d, (lo, hi) in self.set_partition.items()}
            spans = sorted(self.set_partition.values())
            for lo, hi in spans:
                if not 0 <= lo < hi <= self.sets_per_bank:
                    raise ValueError(f"set range [{lo}, {hi}) outside 0..{self.sets_per_bank}")
            for (_, hi), (lo, _) in zip(spans, spans[1:]):
                if lo < hi:
                    raise ValueError("set partitions overlap")

    @property
    def sets_per_bank(self) -> int:
        return self.size // (self.line_size * self.associativity * self.n_cache_banks)

    def partition(self, n_domains: int) -> dict[int, tuple[int, int]]:
        if self.set_partition is not None:
            missing = set(range(n_domains)) - set(self.set_partition)
            if missing:
                raise ValueError(f"no set range for domains {sorted(missing)}")
            return self.set_partition
        per = self.sets_per_bank // n_domains
        if per < 1:
            raise ValueError("more domains than sets")
        return {d: (d * per, (d + 1) * per) for d in range(n_domains)}


@dataclass(eq=False, slots=True)
class Mshr:
    slot: int
    cache_bank: int
    request: MemRequest
    eligible_cycle: int
    state: str = ALLOCATED
    waiters: list = field(default_factory=list)

    @property
    def is_writeback(self) -> bool:
        return self.request.is_write


@dataclass
class DomainCounters:
    hits: int = 0
    misses: int = 0
    merged: int = 0
    writebacks: int = 0
    blocked: int = 0


class SharedLLC:
    """Set-partitioned shared cache with per-bank MSHRs and throttle gating.

    ``bank_of``/``row_of`` translate physical addresses into DRAM coordinates;
    they decide which throttle bit guards each miss and writeback.
    """

    def __init__(
        self,
        cfg: LlcConfig,
        tagging: TaggingConfig,
        bank_of: Callable[[int], int],
        row_of: Callable[[int], int],
        seed: int = 0,
        gate_writebacks: bool = True,
    ):
        self.cfg = cfg
        self.tagging = tagging
        self.bank_of = bank_of
        self.row_of = row_of
        self.rng = random.Random(seed)
        self.gate_writebacks = gate_writebacks
        self.line_shift = cfg.line_size.bit_length() - 1
        self.cb_bits = cfg.n_cache_banks.bit_length() - 1
        self.cb_mask = cfg.n_cache_banks - 1
        self.parts = cfg.partition(tagging.n_domains)
        nsets = cfg.sets_per_bank
        self.sets: list[list[list[int]]] = [[[] for _ in range(nsets)] for _ in range(cfg.n_cache_banks)]
        self.resident: dict[int, bool] = {}  # line -> dirty
        self.owner: dict[int, int] = {}  # line -> domain whose partition holds it
        self.pending: dict[int, Mshr] = {}
        self.slots: list[list[Mshr | None]] = [[None] * cfg.mshrs_per_bank for _ in range(cfg.n_cache_banks)]
        self.free_slots: list[list[int]] = [list(range(cfg.mshrs_per_bank)) for _ in range(cfg.n_cache_banks)]
        self.unissued: list[list[Mshr]] = [[] for _ in range(cfg.n_cache_banks)]
        self.rr = [0] * cfg.n_cache_banks
        self.counters = [DomainCounters() for _ in range(tagging.n_domains)]
        self._next_id = 0

    # -- geometry --------------------------------------------------------

    def cache_bank_of(self, paddr: int) -> int:
        return (paddr >> self.line_shift) & self.cb_mask

    def set_of(self, paddr: int, domain: int) -> int:
        lo, hi = self.parts[domain]
        h = paddr >> (self.line_shift + self.cb_bits)
        h ^= (h >> 9) ^ (h >> 18)
        return lo + h % (hi - lo)

    def allocated(self, cache_bank: int) -> int:
        return self.cfg.mshrs_per_bank - len(self.free_slots[cache_bank])

    def new_request(self, core: int, domain: int, is_write: bool, paddr: int, bank: int | None = None) -> MemRequest:
        rid = self._next_id
        self._next_id += 1
        if bank is None:
            bank = self.bank_of(paddr)
        return MemRequest(rid, core, domain, is_write, paddr, bank, self.row_of(paddr))

    # -- core side -------------------------------------------------------

    def access(self, core: int, paddr: int, is_write: bool, now: int, throttle=None, waiter=None) -> str:
        """Look up one core access.

        Returns ``HIT`` (data after ``hit_latency``), ``MISS`` (an MSHR now
        tracks the line; ``waiter`` is handed back from :meth:`fill`), or
        ``BLOCKED`` when the miss may not proceed this cycle because the
        domain's throttle for the target DRAM bank is set or no MSHR/way is
        free. Blocked accesses leave no state behind and should be retried.
        """
        domain = self.tagging.core_to_domain[core]
        ctr = self.counters[domain]
        line = paddr >> self.line_shift
        if line in self.resident:
            if is_write:
                self.resident[line] = True
            ctr.hits += 1
            return HIT
        m = self.pending.get(line)
        if m is not None:
            m.waiters.append((waiter, is_write))
            ctr.merged += 1
            return MISS
        bank = self.bank_of(paddr)
        if throttle is not None and throttle.masks[domain] >> bank & 1:
            ctr.blocked += 1
            return BLOCKED
        cb = line & self.cb_mask
        free = self.free_slots[cb]
        if not free:
            ctr.blocked += 1
            return BLOCKED
        ways = self.sets[cb][self.set_of(paddr, domain)]
        evict = None
        if len(ways) >= self.cfg.associativity:
            # Lines still being refilled cannot be evicted.
            idx = self.rng.randrange(len(ways))
            if ways[idx] not in self.resident:
                candidates = [i for i, ln in enumerate(ways) if ln in self.resident]
                if not candidates:
                    ctr.blocked += 1
                    return BLOCKED
                idx = candidates[self.rng.randrange(len(candidates))]
            evict = ways[idx]
            if self.resident[evict] and len(free) < 2:
                ctr.blocked += 1
                return BLOCKED
            ways[idx] = line
        else:
            ways.append(line)

        if evict is not None:
            dirty = self.resident.pop(evict)
            owner = self.owner.pop(evict)
            if dirty:
                wb = self.new_request(core, owner, True, evict << self.line_shift)
                self._alloc(cb, wb, now)
                self.counters[owner].writebacks += 1
        self.owner[line] = domain
        req = self.new_request(core, domain, False, paddr, bank)
        m = self._alloc(cb, req, now + self.cfg.hit_latency)
        m.waiters.append((waiter, is_write))
        self.pending[line] = m
        ctr.misses += 1
        return MISS

    def _alloc(self, cb: int, req: MemRequest, eligible: int) -> Mshr:
        free = self.free_slots[cb]
        slot = free.pop(0)
        m = Mshr(slot, cb, req, eligible)
        req.tag = m
        self.slots[cb][slot] = m
        unissued = self.unissued[cb]
        # Keep unissued MSHRs in slot order for the round-robin scan.
        i = len(unissued)
        while i and unissued[i - 1].slot > slot:
            i -= 1
        unissued.insert(i, m)
        return m

    def _release(self, m: Mshr) -> None:
        cb = m.cache_bank
        self.slots[cb][m.slot] = None
        free = self.free_slots[cb]
        free.append(m.slot)
        free.sort()

    def warm(self, domain: int, paddrs: Sequence[int], dirty: bool) -> int:
        """Install lines into free ways of ``domain``'s partition; returns how many fit.

        Functional warming: no memory traffic, no evictions.
        """
        n = 0
        assoc = self.cfg.associativity
        for paddr in paddrs:
            line = paddr >> self.line_shift
            if line in self.resident or line in self.pending:
                continue
            ways = self.sets[line & self.cb_mask][self.set_of(paddr, domain)]
            if len(ways) >= assoc:
                continue
            ways.append(line)
            self.resident[line] = dirty
            self.owner[line] = domain
            n += 1
        return n

    # -- memory side -----------------------------------------------------

    def arbiter_select(self, cache_bank: int, throttle=None, now: int = 0, can_accept=None) -> Mshr | None:
        """Next MSHR in round-robin order that may issue to memory at ``now``.

        An MSHR is schedulable when its lookup latency has elapsed, its
        (domain, DRAM bank) throttle bit is clear and, if ``can_accept`` is
        given, the DRAM queue for its request type has room. The round-robin
        pointer moves just past the selected slot.
        """
        unissued = self.unissued[cache_bank]
        if not unissued:
            return None
        start = self.rr[cache_bank]
        masks = throttle.masks if throttle is not None else None
        first = None
        for m in unissued:
            if m.eligible_cycle > now:
                continue
            req = m.request
            if masks is not None and (self.gate_writebacks or not req.is_write):
                if masks[req.domain] >> req.bank & 1:
                    continue
            if can_accept is not None and not can_accept(req.is_write):
                continue
            if m.slot >= start:
                self.rr[cache_bank] = m.slot + 1
                return m
            if first is None:
                first = m
        if first is not None:
            self.rr[cache_bank] = first.slot + 1
        return first

    def mark_issued(self, m: Mshr) -> None:
        self.unissued[m.cache_bank].remove(m)
        if m.request.is_write:
            # Posted writeback: the controller owns it from here on.
            m.state = ISSUED
            self._release(m)
        else:
            m.state = FILLING

    def fill(self, req: MemRequest, now: int) -> list:
        """Complete a refill; returns the waiters recorded by :meth:`access`."""
        m: Mshr = req.tag
        line = req.paddr >> self.line_shift
        del self.pending[line]
        self.resident[line] = any(w for _, w in m.waiters)
        self._release(m)
        return [w for w, _ in m.waiters]

    def earliest_unissued(self) -> float:
        t = float("inf")
        for unissued in self.unissued:
            for m in unissued:
                if m.eligible_cycle < t:
                    t = m.eligible_cycle
        return t

    def domain_stats(self) -> list[dict]:
        return [vars(c).copy() for c in self.counters]
