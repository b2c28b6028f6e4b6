"""Event-skipping simulation of cores, shared LLC, regulator and DRAM.

Every processed cycle runs the same fixed sequence: regulator tick, DRAM
tick and refills, LLC hit completions, core issue, then one arbiter pick per
cache bank. Cycles in which nothing can change are skipped.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

from bankreg.bankmap import BankMap, RowColumnLayout
from bankreg.cachefront import BLOCKED, HIT, LlcConfig, SharedLLC, TaggingConfig
from bankreg.dramcore import DramConfig, DramController, TraceSink
from bankreg.errors import SimulationTimeout
from bankreg.regulator import Regulator, RegulatorConfig
import numpy as np

from bankreg.workloadgen import CoreBinding, PllWorkload, SequentialVictim


class _Core:
    __slots__ = ("idx", "binding", "workload", "domain", "mlp", "start", "outstanding", "blocked", "completed_at_warmup")

    def __init__(self, idx: int, binding: CoreBinding):
        self.idx = idx
        self.binding = binding
        self.workload = binding.workload
        self.domain = binding.domain
        self.mlp = binding.mlp
        self.start = getattr(binding.workload, "start_cycle", 0)
        self.outstanding = 0
        self.blocked: list = []
        self.completed_at_warmup = 0


@dataclass
class CoreReport:
    core: int
    name: str
    role: str
    domain: int
    completed: int
    measured_completions: int
    bandwidth_mbps: float
    finish_cycle: int | None = None
    runtime: int | None = None


@dataclass
class SimReport:
    end_cycle: int
    warmup_cycle: int
    cores: list[CoreReport]
    dram: dict
    llc: list[dict]
    throttle_cycles: list[int] = field(default_factory=list)
    issued_per_domain: list[int] = field(default_factory=list)
    # DRAM requests (fills and writebacks) per domain inside the window.
    dram_issued_per_domain: list[int] = field(default_factory=list)
    events: int = 0

    def core(self, name: str) -> CoreReport:
        for c in self.cores:
            if c.name == name:
                return c
        raise KeyError(name)


class System:
    def __init__(
        self,
        bank_map: BankMap,
        layout: RowColumnLayout,
        bindings: Sequence[CoreBinding],
        dram_cfg: DramConfig | None = None,
        llc_cfg: LlcConfig | None = None,
        reg_cfg: RegulatorConfig | None = None,
        n_domains: int | None = None,
        seed: int = 0,
        trace: TraceSink | None = None,
        warm_llc: bool = False,
    ):
        self.dram_cfg = dram_cfg or DramConfig()
        if bank_map.n_banks != self.dram_cfg.n_banks:
            raise ValueError(f"bank map has {bank_map.n_banks} banks, DRAM has {self.dram_cfg.n_banks}")
        self.bank_map = bank_map
        self.layout = layout
        bindings = sorted(bindings, key=lambda b: b.core)
        cores = [b.core for b in bindings]
        if len(set(cores)) != len(cores):
            raise ValueError("one workload per core")
        n_cores = max(cores) + 1 if cores else 1
        if n_domains is None:
            n_domains = reg_cfg.n_domains if reg_cfg else max((b.domain for b in bindings), default=0) + 1
        c2d = [0] * n_cores
        for b in bindings:
            c2d[b.core] = b.domain
        self.tagging = TaggingConfig(c2d, n_domains)
        gate_wb = reg_cfg.count_writebacks if reg_cfg else True
        self.llc = SharedLLC(llc_cfg or LlcConfig(), self.tagging, bank_map.bank_of, layout.row_of, seed, gate_wb)
        self.dram = DramController(self.dram_cfg, trace)
        if reg_cfg is not None:
            if reg_cfg.n_banks != self.dram_cfg.n_banks:
                raise ValueError("regulator and DRAM disagree on the bank count")
            if reg_cfg.n_domains != n_domains:
                raise ValueError("regulator domain count mismatch")
        self.reg = Regulator(reg_cfg) if reg_cfg is not None else None
        self.cores = [_Core(b.core, b) for b in bindings]
        self.events = 0
        if warm_llc:
            self._warm(seed)

    def _warm(self, seed: int) -> None:
        """Fill co-runner partitions as a long-running PLL would leave them.

        Lines come from each workload's own nodes, interleaved across the
        workloads of a domain; write workloads leave them dirty. Victims
        start cold.
        """
        rng = np.random.default_rng(seed)
        per_domain: dict[int, list[tuple[list[int], bool]]] = {}
        for c in self.cores:
            wl = c.workload
            if c.binding.role == "victim" or not isinstance(wl, PllWorkload):
                continue
            nodes = np.array([a for chain in wl.lists for a in chain], dtype=np.uint64)
            nodes = nodes[rng.permutation(len(nodes))]
            per_domain.setdefault(c.domain, []).append(([int(x) for x in nodes], wl.is_write))
        for d, items in per_domain.items():
            longest = max(len(n) for n, _ in items)
            for i in range(0, longest, 1024):
                for nodes, dirty in items:
                    self.llc.warm(d, nodes[i:i + 1024], dirty)

    def run(self, duration: int, warmup: int = 0, stop_when_victims_done: bool = False) -> SimReport:
        """Simulate ``[0, duration)`` cycles and report per-core bandwidth after ``warmup``."""
        if warmup >= duration:
            raise ValueError("measurement window shorter than warm-up")
        llc, dram, reg = self.llc, self.dram, self.reg
        access, fill = llc.access, llc.fill
        arbiter_select, mark_issued = llc.arbiter_select, llc.mark_issued
        dram_tick, dram_enqueue, can_accept = dram.tick, dram.enqueue, dram.can_accept
        hit_latency = llc.cfg.hit_latency
        refill_latency = llc.cfg.refill_latency
        n_cb = llc.cfg.n_cache_banks
        unissued = llc.unissued
        cores = self.cores
        by_idx = {c.idx: c for c in cores}
        victims = {c for c in cores if isinstance(c.workload, SequentialVictim)}
        throttle = reg.throttle if reg is not None else None
        reg_tick = reg.on_tick if reg is not None else None
        on_issue = reg.on_issue if reg is not None else None
        count_wb = reg.cfg.count_writebacks if reg is not None else True
        dom_issued = self.dom_issued = [0] * self.tagging.n_domains
        dom_at_warmup = list(dom_issued)
        hits: list = []
        seq = 0
        now = 0
        warm_done = warmup == 0
        events = 0
        finished = False

        while now < duration:
            events += 1
            if reg_tick is not None:
                reg_tick(now)
            if not warm_done and now >= warmup:
                for c in cores:
                    c.completed_at_warmup = c.workload.completed
                dom_at_warmup = list(dom_issued)
                warm_done = True

            # memory completions
            for req in dram_tick(now):
                if not req.is_write:
                    for core_idx, tag in fill(req, now):
                        c = by_idx[core_idx]
                        if refill_latency:
                            seq += 1
                            heapq.heappush(hits, (now + refill_latency, seq, c, tag))
                            continue
                        c.outstanding -= 1
                        c.workload.complete(tag, now)
                        finished = finished or c in victims
            while hits and hits[0][0] <= now:
                _, _, c, tag = heapq.heappop(hits)
                c.outstanding -= 1
                c.workload.complete(tag, now)
                finished = finished or c in victims

            # core issue
            can_issue = False
            for c in cores:
                wl = c.workload
                if now < c.start:
                    continue
                if c.blocked:
                    still = []
                    for acc in c.blocked:
                        res = access(c.idx, acc.paddr, acc.is_write, now, throttle, (c.idx, acc.tag))
                        if res is BLOCKED:
                            still.append(acc)
                        elif res is HIT:
                            seq += 1
                            heapq.heappush(hits, (now + hit_latency, seq, c, acc.tag))
                    c.blocked = still
                if c.outstanding < c.mlp and wl.has_ready():
                    acc = wl.pop_next(now)
                    c.outstanding += 1
                    res = access(c.idx, acc.paddr, acc.is_write, now, throttle, (c.idx, acc.tag))
                    if res is BLOCKED:
                        c.blocked.append(acc)
                    elif res is HIT:
                        seq += 1
                        heapq.heappush(hits, (now + hit_latency, seq, c, acc.tag))
                    if c.outstanding < c.mlp and wl.has_ready():
                        can_issue = True

            # LLC -> DRAM
            issued = False
            for cb in range(n_cb):
                if not unissued[cb]:
                    continue
                m = arbiter_select(cb, throttle, now, can_accept)
                if m is None:
                    continue
                req = m.request
                dram_enqueue(req, now)
                dom_issued[req.domain] += 1
                if on_issue is not None and (count_wb or not req.is_write):
                    on_issue(req.domain, req.bank, now)
                mark_issued(m)
                issued = True

            if finished:
                finished = False
                if stop_when_victims_done and all(v.workload.done for v in victims):
                    break

            # next cycle worth processing
            if can_issue or issued:
                nxt = now + 1
            else:
                nxt = dram.next_event()
                for lst in unissued:
                    for m in lst:
                        e = m.eligible_cycle
                        if now < e < nxt:
                            nxt = e
                if hits and hits[0][0] < nxt:
                    nxt = hits[0][0]
                if reg is not None and reg.next_boundary < nxt:
                    if throttle.any() or any(c.blocked for c in cores):
                        nxt = reg.next_boundary
                if not warm_done and warmup < nxt:
                    nxt = warmup
                for c in cores:
                    if now < c.start < nxt:
                        nxt = c.start
            if nxt <= now:
                nxt = now + 1
            now = int(nxt) if nxt < duration else duration

        end = now
        if reg is not None:
            reg.finish(end)
        self.events += events
        rep = self._report(end, warmup, events)
        rep.dram_issued_per_domain = [a - b for a, b in zip(dom_issued, dom_at_warmup)]
        return rep

    def _report(self, end: int, warmup: int, events: int) -> SimReport:
        freq = self.dram_cfg.clock_freq
        line = self.dram_cfg.line_size
        window = end - warmup
        reports = []
        for c in self.cores:
            wl = c.workload
            n = wl.completed - c.completed_at_warmup
            bw = n * line / (window / freq) / 1e6 if window > 0 else 0.0
            reports.append(
                CoreReport(
                    core=c.idx,
                    name=wl.name,
                    role=c.binding.role,
                    domain=c.domain,
                    completed=wl.completed,
                    measured_completions=n,
                    bandwidth_mbps=bw,
                    finish_cycle=getattr(wl, "finish_cycle", None),
                    runtime=getattr(wl, "runtime", None),
                )
            )
        return SimReport(
            end_cycle=end,
            warmup_cycle=warmup,
            cores=reports,
            dram=self.dram.stats.as_dict(),
            llc=self.llc.domain_stats(),
            throttle_cycles=list(self.reg.throttle_cycles) if self.reg else [],
            issued_per_domain=list(self.reg.issued) if self.reg else [],
            events=events,
        )


def run_victim(system: System, max_cycles: int, warmup: int = 0) -> SimReport:
    """Run until every sequential victim finishes its quota; raise on timeout.

    With ``warmup`` at the victim's start cycle the per-core bandwidths cover
    exactly the victim's execution.
    """
    rep = system.run(max_cycles, warmup=warmup, stop_when_victims_done=True)
    unfinished = [c.name for c in rep.cores if c.role == "victim" and c.finish_cycle is None]
    if unfinished:
        raise SimulationTimeout(f"victim(s) {unfinished} did not finish within {max_cycles} cycles")
    return rep
