"""Synthetic workloads: bank-aware parallel linked lists and a sequential victim.

A parallel linked-list (PLL) workload walks ``L`` independent shuffled
chains. Each chain has at most one access in flight because the next node
address is only known once the current node's data returns. Restricting
node addresses to one DRAM bank (SB) or spreading them over all banks (AB)
gives the attacker configurations ABr/ABw/SBr/SBw.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from bankreg.bankmap import AddressSpaceError, BankMap, RowColumnLayout, addresses_for_bank, available_rows


class Access(NamedTuple):
    paddr: int
    is_write: bool
    tag: int


class Workload:
    """Common bookkeeping: completion counters and the core binding."""

    kind = "workload"

    def __init__(self, name: str, is_write: bool = False):
        self.name = name
        self.is_write = is_write
        self.completed = 0
        self.issued = 0

    def has_ready(self) -> bool:
        raise NotImplementedError

    def next_requests(self, completions: Sequence[int] = (), now: int = 0, limit: int = 1) -> list[Access]:
        """Retire ``completions`` then emit up to ``limit`` new accesses."""
        for tag in completions:
            self.complete(tag, now)
        out = []
        while len(out) < limit and self.has_ready():
            out.append(self.pop_next(now))
        return out

    def pop_next(self, now: int) -> Access:
        raise NotImplementedError

    def complete(self, tag: int, now: int) -> None:
        raise NotImplementedError

    @property
    def footprint(self) -> int:
        raise NotImplementedError


class PllWorkload(Workload):
    kind = "pll"

    def __init__(self, name: str, lists: list[list[int]], target_banks: Sequence[int], is_write: bool, seed: int):
        super().__init__(name, is_write)
        self.lists = lists
        self.target_banks = tuple(target_banks)
        self.seed = seed
        self.pos = [0] * len(lists)
        self.outstanding = [False] * len(lists)
        self.ready: deque[int] = deque(range(len(lists)))

    @property
    def n_lists(self) -> int:
        return len(self.lists)

    @property
    def entries_per_list(self) -> int:
        return len(self.lists[0])

    @property
    def footprint(self) -> int:
        return sum(len(x) for x in self.lists) * 64

    def current_node(self, lst: int) -> int:
        return self.lists[lst][self.pos[lst]]

    def has_ready(self) -> bool:
        return bool(self.ready)

    def pop_next(self, now: int) -> Access:
        lst = self.ready.popleft()
        nodes = self.lists[lst]
        p = self.pos[lst]
        self.pos[lst] = p + 1 if p + 1 < len(nodes) else 0
        self.outstanding[lst] = True
        self.issued += 1
        return Access(nodes[p], self.is_write, lst)

    def complete(self, tag: int, now: int) -> None:
        if not self.outstanding[tag]:
            raise ValueError(f"list {tag} has no access in flight")
        self.outstanding[tag] = False
        self.completed += 1
        self.ready.append(tag)


class SequentialVictim(Workload):
    """Streaming reads over an array, one line at a time, for ``quota`` lines."""

    kind = "sequential"

    def __init__(
        self,
        name: str,
        base: int,
        array_size: int,
        quota: int,
        stride: int = 64,
        is_write: bool = False,
        start_cycle: int = 0,
    ):
        super().__init__(name, is_write)
        if array_size < stride:
            raise ValueError("array smaller than one stride")
        self.base = base
        self.array_size = array_size
        self.stride = stride
        self.n_lines = array_size // stride
        self.quota = quota
        self.position = 0
        # Lets co-runners reach steady state before the victim starts.
        self.start_cycle = start_cycle
        self.finish_cycle: int | None = None

    @property
    def footprint(self) -> int:
        return self.array_size

    @property
    def done(self) -> bool:
        return self.finish_cycle is not None

    @property
    def runtime(self) -> int | None:
        return None if self.finish_cycle is None else self.finish_cycle - self.start_cycle

    def has_ready(self) -> bool:
        return self.issued < self.quota

    def pop_next(self, now: int) -> Access:
        i = self.position
        self.position += 1
        self.issued += 1
        return Access(self.base + (i % self.n_lines) * self.stride, self.is_write, i)

    def complete(self, tag: int, now: int) -> None:
        self.completed += 1
        if self.completed == self.quota:
            self.finish_cycle = now


def build_pll(
    L: int,
    entries: int,
    banks: Sequence[int],
    bank_map: BankMap,
    layout: RowColumnLayout,
    is_write: bool = False,
    seed: int = 0,
    name: str = "pll",
    distinct_rows: bool = True,
    exclude: set[int] | None = None,
) -> PllWorkload:
    """Build ``L`` shuffled chains of ``entries`` nodes over ``banks``.

    With a single target bank and ``distinct_rows``, every node of a chain
    sits in its own row, so consecutive accesses always conflict in the row
    buffer. Multi-bank chains spread nodes evenly over the target banks.
    """
    if L < 1 or entries < 1:
        raise ValueError("L and entries must be >= 1")
    banks = sorted(set(int(b) for b in banks))
    if not banks:
        raise ValueError("banks must be non-empty")
    rng = np.random.default_rng(seed)
    taken = set(exclude or ())

    if len(banks) == 1 and distinct_rows:
        (b,) = banks
        cap = available_rows(b, bank_map, layout)
        if entries > cap:
            raise AddressSpaceError(f"{entries} entries per list need distinct rows; bank {b} has {cap}")
        lists = []
        for _ in range(L):
            chain = addresses_for_bank(b, entries, layout, bank_map, True, rng, exclude=taken)
            taken.update(chain)
            lists.append(chain)
        return PllWorkload(name, lists, banks, is_write, seed)

    total = L * entries
    pool: list[int] = []
    for i, b in enumerate(banks):
        n = total // len(banks) + (1 if i < total % len(banks) else 0)
        if n:
            got = addresses_for_bank(b, n, layout, bank_map, False, rng, exclude=taken)
            taken.update(got)
            pool.extend(got)
    arr = np.asarray(pool, dtype=np.uint64)[rng.permutation(total)]
    lists = [[int(x) for x in arr[i * entries:(i + 1) * entries]] for i in range(L)]
    return PllWorkload(name, lists, banks, is_write, seed)


def measure_bandwidth(completions: int, cycles: float, freq_hz: float = 1e9, line_size: int = 64) -> float:
    """MB/s for ``completions`` line transfers over ``cycles`` simulated cycles."""
    if cycles < 0:
        raise ValueError("negative measurement window")
    if completions == 0:
        return 0.0
    if cycles == 0:
        raise ValueError("empty measurement window")
    seconds = cycles / freq_hz
    return completions * line_size / seconds / 1e6


@dataclass
class CoreBinding:
    workload: Workload
    core: int
    domain: int
    mlp: int = 6
    role: str = "attacker"
    extra: dict = field(default_factory=dict)
