"""Banked DRAM timing model with an FR-FCFS scheduler.

Separate read and write queues, open-page row buffers, watermark write
batching and write-to-read bus turnaround. Time is counted in controller
cycles. ``tick`` may skip cycles as long as it is called at every cycle
returned by :meth:`DramController.next_event`.
"""

from __future__ import annotations

import csv
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from bankreg.errors import ContractViolation

NEVER = float("inf")


@dataclass
class DramConfig:
    n_banks: int = 8
    tRC: int = 47
    tRCD: int = 14
    tRP: int = 14
    tCL: int = 14
    tWTR: int = 8
    tBURST: int = 4
    # Write recovery: last write data to PRECHARGE of the same bank.
    tWR: int = 15
    # ACT-to-ACT across banks, and at most four ACTs in any tFAW window.
    tRRD: int = 6
    tFAW: int = 30
    clock_freq: float = 1e9
    read_q_depth: int = 32
    write_q_depth: int = 32
    write_high_watermark: int = 24
    write_low_watermark: int = 8
    # False: no write draining; the oldest pending request picks the bus direction.
    write_batching: bool = True
    line_size: int = 64

    def __post_init__(self):
        if self.n_banks < 1 or self.n_banks & (self.n_banks - 1):
            raise ValueError("n_banks must be a power of two")
        for name in ("tRC", "tRCD", "tRP", "tCL", "tBURST"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if min(self.tWTR, self.tWR, self.tRRD, self.tFAW) < 0:
            raise ValueError("tWTR, tWR, tRRD and tFAW must be non-negative")
        if self.tRC < self.tRCD + self.tRP:
            raise ValueError("tRC must be >= tRCD + tRP")
        if not 0 <= self.write_low_watermark < self.write_high_watermark <= self.write_q_depth:
            raise ValueError("watermarks must satisfy 0 <= low < high <= write_q_depth")
        if self.read_q_depth < 1:
            raise ValueError("read_q_depth must be >= 1")

    @property
    def tRAS(self) -> int:
        # ACT-to-PRE; together with tRP this spaces same-bank ACTs by exactly tRC.
        return self.tRC - self.tRP

    @property
    def tRC_ns(self) -> float:
        return self.tRC / self.clock_freq * 1e9


def guaranteed_bw(cfg: DramConfig) -> float:
    """Worst-case single-bank bandwidth in MB/s: one line per tRC."""
    trc_s = cfg.tRC / cfg.clock_freq
    if trc_s <= 0:
        raise ValueError("tRC must be positive")
    return cfg.line_size / trc_s / 1e6


def guaranteed_bw_ns(tRC_ns: float, line_size: int = 64) -> float:
    if tRC_ns <= 0:
        raise ValueError("tRC must be positive")
    return line_size / (tRC_ns * 1e-9) / 1e6


@dataclass(eq=False, slots=True)
class MemRequest:
    id: int
    core: int
    domain: int
    is_write: bool
    paddr: int
    bank: int
    row: int
    enqueue_cycle: int = -1
    complete_cycle: int = -1
    tag: object = None


@dataclass(slots=True)
class BankState:
    open_row: int | None = None
    last_activate_cycle: float = -NEVER
    next_act: float = 0
    next_pre: float = 0
    next_cas: float = 0

    @property
    def busy_until(self) -> float:
        return max(self.next_act, self.next_pre, self.next_cas)


@dataclass
class DramStats:
    reads_served: int = 0
    writes_served: int = 0
    bus_mode_switches: int = 0
    per_bank_activations: list[int] = field(default_factory=list)
    busy_cycles: int = 0

    def as_dict(self) -> dict:
        return {
            "reads_served": self.reads_served,
            "writes_served": self.writes_served,
            "bus_mode_switches": self.bus_mode_switches,
            "activations": sum(self.per_bank_activations),
            "busy_cycles": self.busy_cycles,
        }


class Command(NamedTuple):
    kind: str  # "ACT" | "PRE" | "RD" | "WR"
    request: MemRequest


TraceSink = Callable[[int, str, int, int, int, str], None]


class CsvTrace:
    """Per-command trace rows: cycle, command, bank, row, request id, bus mode."""

    def __init__(self, fh):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(["cycle", "command", "bank", "row", "request_id", "bus_mode"])

    def __call__(self, cycle, command, bank, row, req_id, mode):
        self._w.writerow([cycle, command, bank, row, req_id, mode])


class DramController:
    def __init__(self, cfg: DramConfig | None = None, trace: TraceSink | None = None):
        self.cfg = cfg = cfg or DramConfig()
        self.banks = [BankState() for _ in range(cfg.n_banks)]
        self.readq: list[list[MemRequest]] = [[] for _ in range(cfg.n_banks)]
        self.writeq: list[list[MemRequest]] = [[] for _ in range(cfg.n_banks)]
        self._rbanks: set[int] = set()
        self._wbanks: set[int] = set()
        self.n_reads = 0
        self.n_writes = 0
        self.write_mode = False
        self.inflight: list[tuple[int, int, MemRequest]] = []
        self.bus_free = 0
        self.wr_data_end = -NEVER
        self.now = -1
        self.enqueued = 0
        self.completed = 0
        self.stats = DramStats(per_bank_activations=[0] * cfg.n_banks)
        self.trace = trace
        self._dirty = True
        self._next_ready = 0
        self._acts: deque[int] = deque(maxlen=4)
        self._act_ok = 0

    # -- queue interface -------------------------------------------------

    def can_accept(self, is_write: bool) -> bool:
        if is_write:
            return self.n_writes < self.cfg.write_q_depth
        return self.n_reads < self.cfg.read_q_depth

    def enqueue(self, req: MemRequest, now: int) -> bool:
        """Queue a request; False means the target queue is full (retry later)."""
        if not 0 <= req.bank < self.cfg.n_banks:
            raise ContractViolation(f"bank {req.bank} out of range")
        if req.is_write:
            if self.n_writes >= self.cfg.write_q_depth:
                return False
            self.writeq[req.bank].append(req)
            self._wbanks.add(req.bank)
            self.n_writes += 1
        else:
            if self.n_reads >= self.cfg.read_q_depth:
                return False
            self.readq[req.bank].append(req)
            self._rbanks.add(req.bank)
            self.n_reads += 1
        req.enqueue_cycle = now
        self.enqueued += 1
        self._dirty = True
        return True

    @property
    def queued(self) -> int:
        return self.n_reads + self.n_writes

    @property
    def in_flight(self) -> int:
        return len(self.inflight)

    @property
    def idle(self) -> bool:
        return not self.n_reads and not self.n_writes and not self.inflight

    # -- scheduling ------------------------------------------------------

    def _mode_for_next_cycle(self) -> bool:
        cfg = self.cfg
        if not cfg.write_batching:
            if not self.n_writes:
                return False
            if not self.n_reads:
                return True
            return self._oldest(self.writeq, self._wbanks) < self._oldest(self.readq, self._rbanks)
        if self.write_mode:
            if not self.n_writes or (self.n_writes <= cfg.write_low_watermark and self.n_reads):
                return False
            return True
        if self.n_writes >= cfg.write_high_watermark or (self.n_writes and not self.n_reads):
            return True
        return False

    @staticmethod
    def _oldest(queues, active) -> tuple[int, int]:
        return min((queues[b][0].enqueue_cycle, queues[b][0].id) for b in active)

    def _scan(self, now: int, write_mode: bool):
        """Best ready command at ``now`` plus the earliest cycle anything else becomes ready."""
        cfg = self.cfg
        if write_mode:
            queues, active = self.writeq, self._wbanks
            cas_bus = self.bus_free - cfg.tCL
        else:
            queues, active = self.readq, self._rbanks
            cas_bus = max(self.bus_free - cfg.tCL, self.wr_data_end + cfg.tWTR)
        banks = self.banks
        best_hit = best_miss = None
        hit_key = miss_key = None
        next_ready = NEVER
        for b in active:
            q = queues[b]
            bank = banks[b]
            orow = bank.open_row
            hit = None
            if orow is not None:
                for r in q:
                    if r.row == orow:
                        hit = r
                        break
            if hit is not None:
                t = bank.next_cas if bank.next_cas > cas_bus else cas_bus
                if t <= now:
                    key = (hit.enqueue_cycle, hit.id)
                    if hit_key is None or key < hit_key:
                        best_hit, hit_key = hit, key
                elif t < next_ready:
                    next_ready = t
            else:
                r = q[0]
                if orow is None:
                    t = bank.next_act if bank.next_act > self._act_ok else self._act_ok
                else:
                    t = bank.next_pre
                if t <= now:
                    key = (r.enqueue_cycle, r.id)
                    if miss_key is None or key < miss_key:
                        best_miss, miss_key = r, key
                elif t < next_ready:
                    next_ready = t
        if best_hit is not None:
            return Command("WR" if write_mode else "RD", best_hit), next_ready
        if best_miss is not None:
            kind = "ACT" if banks[best_miss.bank].open_row is None else "PRE"
            return Command(kind, best_miss), next_ready
        return None, next_ready

    def pick_next_command(self, now: int | None = None) -> Command | None:
        """FR-FCFS choice for ``now`` without issuing it.

        Among timing-ready requests of the active bus mode, row hits beat row
        misses; ties go to the oldest enqueue cycle, then the lowest id.
        A row with a pending hit is never precharged.
        """
        now = self.now + 1 if now is None else now
        cmd, _ = self._scan(now, self._mode_for_next_cycle())
        return cmd

    def tick(self, now: int) -> list[MemRequest]:
        """Advance to cycle ``now``; return requests whose data transfer ended."""
        if now <= self.now:
            raise ContractViolation(f"tick({now}) after tick({self.now})")
        self.now = now
        done = []
        inflight = self.inflight
        while inflight and inflight[0][0] <= now:
            _, _, req = heapq.heappop(inflight)
            done.append(req)
        if done:
            self.completed += len(done)
            for req in done:
                if req.is_write:
                    self.stats.writes_served += 1
                else:
                    self.stats.reads_served += 1

        if not self.n_reads and not self.n_writes:
            self._next_ready = NEVER
            self._dirty = False
            return done

        mode = self._mode_for_next_cycle()
        if mode != self.write_mode:
            self.write_mode = mode
            self.stats.bus_mode_switches += 1
        cmd, next_ready = self._scan(now, mode)
        if cmd is not None:
            self._issue(cmd, now)
            self._dirty = True
        else:
            self._next_ready = next_ready
            self._dirty = False
        return done

    def _issue(self, cmd: Command, now: int) -> None:
        cfg = self.cfg
        req = cmd.request
        bank = self.banks[req.bank]
        kind = cmd.kind
        if kind == "ACT":
            if now < bank.last_activate_cycle + cfg.tRC:
                raise ContractViolation("ACT violates tRC")
            if now < self._act_ok:
                raise ContractViolation("ACT violates tRRD/tFAW")
            bank.open_row = req.row
            bank.last_activate_cycle = now
            bank.next_cas = now + cfg.tRCD
            bank.next_pre = now + cfg.tRAS
            bank.next_act = now + cfg.tRC
            acts = self._acts
            acts.append(now)
            self._act_ok = now + cfg.tRRD
            if len(acts) == 4 and acts[0] + cfg.tFAW > self._act_ok:
                self._act_ok = acts[0] + cfg.tFAW
            self.stats.per_bank_activations[req.bank] += 1
        elif kind == "PRE":
            bank.open_row = None
            if now + cfg.tRP > bank.next_act:
                bank.next_act = now + cfg.tRP
        else:
            if bank.open_row != req.row:
                raise ContractViolation("CAS to a closed or different row")
            data_start = now + cfg.tCL
            data_end = data_start + cfg.tBURST
            self.bus_free = data_end
            self.stats.busy_cycles += cfg.tBURST
            bank.next_cas = now + cfg.tBURST
            if kind == "WR":
                q = self.writeq[req.bank]
                q.remove(req)
                if not q:
                    self._wbanks.discard(req.bank)
                self.n_writes -= 1
                self.wr_data_end = data_end
                pre_ok = data_end + cfg.tWR
                req.complete_cycle = now + cfg.tBURST
            else:
                q = self.readq[req.bank]
                q.remove(req)
                if not q:
                    self._rbanks.discard(req.bank)
                self.n_reads -= 1
                pre_ok = now + cfg.tBURST
                req.complete_cycle = data_end
            if pre_ok > bank.next_pre:
                bank.next_pre = pre_ok
            heapq.heappush(self.inflight, (req.complete_cycle, req.id, req))
        if self.trace is not None:
            self.trace(now, kind, req.bank, req.row, req.id, "W" if self.write_mode else "R")

    def next_event(self) -> float:
        """Earliest cycle after ``now`` at which ``tick`` can change state."""
        t = self.inflight[0][0] if self.inflight else NEVER
        if self.n_reads or self.n_writes:
            if self._dirty:
                return self.now + 1
            if self._next_ready < t:
                t = self._next_ready
        return t if t > self.now else self.now + 1


def run_trace(
    requests: list[tuple[int, MemRequest]],
    cfg: DramConfig | None = None,
    trace: TraceSink | None = None,
    max_cycles: int = 10**8,
) -> tuple[DramController, list[MemRequest]]:
    """Feed ``(arrival_cycle, request)`` pairs through a fresh controller until drained.

    Requests rejected by a full queue are retried every cycle in arrival order.
    """
    ctl = DramController(cfg, trace=trace)
    pending = sorted(requests, key=lambda p: (p[0], p[1].id))
    i = 0
    backlog: list[MemRequest] = []
    done: list[MemRequest] = []
    now = 0
    while True:
        done.extend(ctl.tick(now))
        while i < len(pending) and pending[i][0] <= now:
            backlog.append(pending[i][1])
            i += 1
        still = []
        stuck = {False: False, True: False}
        for req in backlog:
            if stuck[req.is_write] or not ctl.enqueue(req, now):
                stuck[req.is_write] = True
                still.append(req)
        backlog = still
        if i >= len(pending) and not backlog and ctl.idle:
            return ctl, done
        nxt = ctl.next_event()
        if backlog:
            nxt = now + 1
        elif i < len(pending):
            nxt = min(nxt, pending[i][0])
        if nxt > max_cycles:
            raise ContractViolation("trace did not drain")
        now = int(nxt)
