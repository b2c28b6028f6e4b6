"""Recover an XOR bank map from access-latency measurements.

Pairs of addresses are timed against a simulated DRAM; pairs in the same
bank but different rows pay a full row cycle per access, which separates
them from pairs spread over two banks. Addresses are grouped into conflict
sets, and the XOR differences inside each set span the kernel of the bank
map. The map itself is the orthogonal complement of that kernel over GF(2).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from bankreg import gf2
from bankreg.bankmap import LINE_BITS, BankMap, RowColumnLayout, format_map_spec, maps_equivalent
from bankreg.dramcore import DramConfig, DramController, MemRequest


class InconclusiveError(RuntimeError):
    """Latency samples do not split into a conflict and a no-conflict mode."""


class RankDeficientError(RuntimeError):
    def __init__(self, message: str, partial: "RecoveredMap"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ProbeSample:
    addr_a: int
    addr_b: int
    mean_latency: float
    repeats: int


@dataclass
class ConflictSets:
    sets: list[list[int]]
    threshold: float
    # Every probe made while clustering, as parallel arrays.
    probe_a: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))
    probe_b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint64))
    latencies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    repeats: int = 1
    inconclusive: bool = False

    @property
    def n_clusters(self) -> int:
        return len(self.sets)

    @property
    def samples(self) -> list[ProbeSample]:
        return [
            ProbeSample(int(a), int(b), float(t), self.repeats)
            for a, b, t in zip(self.probe_a, self.probe_b, self.latencies)
        ]


@dataclass
class RecoveredMap:
    bank_map: BankMap | None
    confidence: float
    rank: int
    expected_bits: int | None = None
    kernel_rank: int = 0

    @property
    def complete(self) -> bool:
        return self.bank_map is not None and (self.expected_bits is None or self.rank == self.expected_bits)

    def spec(self) -> str:
        return format_map_spec(self.bank_map) if self.bank_map is not None else ""


def probe_latency(a: int, b: int, bank_map: BankMap, layout: RowColumnLayout, cfg: DramConfig, repeats: int) -> float:
    """Alternate dependent uncached reads to ``a`` and ``b`` on a fresh controller.

    Returns the mean cycles between consecutive completions.
    """
    ctl = DramController(cfg)
    addrs = (a, b)
    now = 0
    last = None
    gaps = []
    for i in range(2 * repeats):
        paddr = addrs[i & 1]
        req = MemRequest(i, 0, 0, False, paddr, bank_map.bank_of(paddr), layout.row_of(paddr))
        ctl.enqueue(req, now)
        done = []
        while not done:
            now = int(ctl.next_event())
            done = ctl.tick(now)
        if last is not None:
            gaps.append(now - last)
        last = now
    return float(np.mean(gaps))


class TimingOracle:
    """Simulated machine with a hidden bank map.

    The DRAM model treats every bank identically, so a pair's latency only
    depends on whether the two addresses share a bank and a row; each case
    is simulated once and reused, with seeded measurement jitter on top.
    """

    def __init__(
        self,
        bank_map: BankMap,
        layout: RowColumnLayout | None = None,
        cfg: DramConfig | None = None,
        repeats: int = 8,
        jitter: float = 1.5,
        seed: int = 0,
    ):
        if repeats < 1:
            raise ValueError("repeats must be >= 1")
        self._map = bank_map
        self.width = bank_map.width
        self.layout = layout or RowColumnLayout(row_shift=16, row_width=max(1, bank_map.width - 16))
        n_banks = max(8, bank_map.n_banks)
        self.cfg = cfg or DramConfig(n_banks=n_banks)
        self.repeats = repeats
        self.jitter = jitter
        self.rng = np.random.default_rng(seed)
        self._cache: dict[tuple[bool, bool], float] = {}
        self.n_probes = 0

    def _check(self, addr: int) -> None:
        if not 0 <= addr < (1 << self.width):
            raise ValueError(f"address {addr:#x} outside the {self.width}-bit space")

    def _base(self, same_bank: bool, same_row: bool) -> float:
        key = (same_bank, same_row)
        if key not in self._cache:
            # Canonical pair on banks 0/1 of a direct-mapped stand-in.
            stand_in = BankMap(((LINE_BITS,),), width=self.width)
            row_b = 0 if same_row else 1 << self.layout.row_shift
            b = row_b | (0 if same_bank else 1 << LINE_BITS)
            cfg = DramConfig(**{**vars(self.cfg), "n_banks": 2})
            self._cache[key] = probe_latency(0, b, stand_in, self.layout, cfg, self.repeats)
        return self._cache[key]

    def probe(self, a: int, b: int) -> ProbeSample:
        self._check(a)
        self._check(b)
        if a >> LINE_BITS == b >> LINE_BITS:
            raise ValueError("probe needs two distinct cache lines")
        same_bank = self._map.bank_of(a) == self._map.bank_of(b)
        same_row = self.layout.row_of(a) == self.layout.row_of(b)
        lat = self._base(same_bank, same_bank and same_row) + self.rng.normal(0.0, self.jitter)
        self.n_probes += 1
        return ProbeSample(a, b, float(lat), self.repeats)

    def probe_many(self, a: int, others: Sequence[int] | np.ndarray) -> np.ndarray:
        """Latencies of ``a`` against each of ``others`` (vectorized :meth:`probe`)."""
        self._check(a)
        others = np.asarray(others, dtype=np.uint64)
        if len(others) and int(others.max()) >> self.width:
            raise ValueError(f"address outside the {self.width}-bit space")
        same_bank = self._map.banks_of(others) == self._map.bank_of(a)
        same_row = same_bank & (self.layout.rows_of(others) == self.layout.row_of(a))
        table = np.array(
            [[self._base(False, False), self._base(False, False)], [self._base(True, False), self._base(True, True)]]
        )
        out = table[same_bank.astype(int), same_row.astype(int)]
        self.n_probes += len(others)
        return out + self.rng.normal(0.0, self.jitter, size=len(others))


def sample_addresses(n: int, width: int, layout: RowColumnLayout, seed: int = 0) -> list[int]:
    """``n`` random line addresses below ``2**width`` with pairwise distinct rows."""
    rng = np.random.default_rng(seed)
    row_bits = max(0, min(layout.row_width, width - layout.row_shift))
    if n > (1 << row_bits):
        raise ValueError(f"only {1 << row_bits} distinct rows in a {width}-bit space")
    rows = rng.choice(1 << row_bits, size=n, replace=False)
    out = []
    low_bits = layout.row_shift - LINE_BITS
    high_shift = layout.row_shift + row_bits
    for r in rows:
        low = int(rng.integers(0, 1 << low_bits)) << LINE_BITS
        high = int(rng.integers(0, 1 << (width - high_shift))) << high_shift if width > high_shift else 0
        out.append(high | (int(r) << layout.row_shift) | low)
    return out


def otsu_threshold(values: Sequence[float]) -> tuple[float, float]:
    """Two-class split maximizing between-class variance; returns (threshold, separability)."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) < 2 or v[0] == v[-1]:
        return float(v[0]) if len(v) else 0.0, 0.0
    total_var = v.var()
    n = len(v)
    csum = np.cumsum(v)
    k = np.arange(1, n)
    w0 = k / n
    m0 = csum[:-1] / k
    m1 = (csum[-1] - csum[:-1]) / (n - k)
    between = w0 * (1 - w0) * (m0 - m1) ** 2
    i = int(np.argmax(between))
    return float((v[i] + v[i + 1]) / 2), float(between[i] / total_var)


def separated_fraction(values: Sequence[float], threshold: float) -> float:
    """Share of samples at least a quarter of the mode gap away from ``threshold``.

    Zero when the threshold leaves one side empty.
    """
    v = np.asarray(values, dtype=float)
    lo, hi = v[v <= threshold], v[v > threshold]
    if not len(lo) or not len(hi):
        return 0.0
    margin = (hi.mean() - lo.mean()) / 4
    return float((np.abs(v - threshold) >= margin).mean())


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def cluster(
    addresses: Sequence[int],
    oracle: TimingOracle,
    threshold: float,
    min_separated: float = 0.95,
) -> ConflictSets:
    """Group addresses into conflict sets.

    Each address is probed against one representative per existing set and
    unioned with every representative it conflicts with (latency above
    ``threshold``); an address with no conflict starts a new set.
    """
    n = len(addresses)
    addr_arr = np.asarray(addresses, dtype=np.uint64)
    uf = _UnionFind(n)
    reps: list[int] = []
    lat_all: list[np.ndarray] = []
    pa: list[np.ndarray] = []
    pb: list[np.ndarray] = []
    for i, a in enumerate(addresses):
        if reps:
            rep_addrs = addr_arr[reps]
            lats = oracle.probe_many(a, rep_addrs)
            lat_all.append(lats)
            pa.append(np.full(len(reps), a, dtype=np.uint64))
            pb.append(rep_addrs)
            hits = np.nonzero(lats > threshold)[0]
            for h in hits:
                uf.union(i, reps[h])
            if len(hits):
                reps = sorted({uf.find(r) for r in reps})
                continue
        reps.append(i)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(addresses[i])
    sets = [groups[k] for k in sorted(groups)]

    inconclusive = False
    values = np.concatenate(lat_all) if lat_all else np.zeros(0)
    if len(values):
        lo = int((values <= threshold).sum())
        if lo == 0 or lo == len(values):
            inconclusive = True
            warnings.warn("threshold does not split the latency samples; clustering is inconclusive", RuntimeWarning)
        else:
            frac = separated_fraction(values, threshold)
            if frac < min_separated:
                raise InconclusiveError(
                    f"latency samples are not bimodal around {threshold:.1f} cycles "
                    f"({frac:.1%} clearly separated)"
                )
    return ConflictSets(
        sets,
        threshold,
        np.concatenate(pa) if pa else np.zeros(0, dtype=np.uint64),
        np.concatenate(pb) if pb else np.zeros(0, dtype=np.uint64),
        values,
        oracle.repeats,
        inconclusive,
    )


def solve(sets: ConflictSets | Sequence[Sequence[int]], width: int, expected_bits: int | None = None) -> RecoveredMap:
    """Row space of the bank map from same-set XOR differences.

    Raises :class:`RankDeficientError` (carrying the partial map) when the
    differences do not pin down ``log2(#sets)`` functions.
    """
    groups = sets.sets if isinstance(sets, ConflictSets) else [list(s) for s in sets]
    if len(groups) < 2:
        raise ValueError("need at least two conflict sets to constrain the map")
    columns = list(range(LINE_BITS, width))
    line_mask = sum(1 << c for c in columns)
    kernel: dict[int, int] = {}
    for g in groups:
        base = g[0]
        for a in g[1:]:
            gf2.insert(kernel, (a ^ base) & line_mask)
    rows = gf2.nullspace(list(kernel.values()), columns)
    # A canonical, sparse-ish basis: reduce with pivots on the lowest bits.
    reduced = [r for _, r in gf2.rref(rows, columns)]
    fns = tuple(tuple(gf2.bits_of(r)) for r in reduced)
    expect = expected_bits
    if expect is None:
        n = len(groups)
        expect = n.bit_length() - 1 if n & (n - 1) == 0 else None
    bank_map = BankMap(fns, width=width) if fns else None
    rec = RecoveredMap(bank_map, 0.0, len(fns), expect, len(kernel))
    if bank_map is None or (expect is not None and len(fns) != expect):
        raise RankDeficientError(
            f"recovered {len(fns)} functions, expected {expect}; kernel rank {len(kernel)} "
            f"of {len(columns) - (expect or 0)} needed",
            rec,
        )
    return rec


def confidence(recovered: BankMap, sets: ConflictSets) -> float:
    """Fraction of clustering probes whose conflict outcome the map predicts."""
    if not len(sets.latencies):
        return 0.0
    predicted = recovered.banks_of(sets.probe_a) == recovered.banks_of(sets.probe_b)
    observed = sets.latencies > sets.threshold
    return float((predicted == observed).mean())


def recover(
    truth: BankMap,
    samples_per_bank: int = 32,
    seed: int = 0,
    layout: RowColumnLayout | None = None,
    cfg: DramConfig | None = None,
    jitter: float = 1.5,
) -> RecoveredMap:
    """End-to-end campaign against a simulated machine hiding ``truth``.

    Only the bank count (a public property of the DRAM part) and the address
    width are taken from ``truth``; its functions are seen only through timing.
    """
    if samples_per_bank < 2:
        raise ValueError("samples_per_bank must be >= 2")
    oracle = TimingOracle(truth, layout, cfg, jitter=jitter, seed=seed)
    n = samples_per_bank * truth.n_banks
    addrs = sample_addresses(n, truth.width, oracle.layout, seed=seed + 1)
    threshold = calibrate_threshold(oracle, addrs, seed + 2, others=4 * truth.n_banks)
    sets = cluster(addrs, oracle, threshold)
    try:
        rec = solve(sets, truth.width, truth.n_bits)
    except RankDeficientError as exc:
        rec = exc.partial
    if rec.bank_map is not None:
        rec.confidence = confidence(rec.bank_map, sets)
    return rec


def calibrate_threshold(
    oracle: TimingOracle, addrs: Sequence[int], seed: int = 0, k: int = 64, others: int = 0
) -> float:
    """Otsu threshold over probes of the first ``k`` addresses against random others.

    Each address is probed against ``max(k, others)`` partners. Passing a few
    partners per bank keeps the rare conflict mode heavy enough for Otsu to
    split on it rather than on jitter, even with hundreds of banks.
    """
    if len(addrs) < 2:
        raise ValueError("need at least two addresses")
    rng = np.random.default_rng(seed)
    m = max(k, others)
    lats = []
    for i in range(min(len(addrs), k)):
        idx = rng.choice(len(addrs), size=min(len(addrs), m + 1), replace=False)
        partners = [addrs[j] for j in idx if j != i][:m]
        lats.append(oracle.probe_many(addrs[i], partners))
    t, _ = otsu_threshold(np.concatenate(lats))
    return t


def check_recovery(truth: BankMap, rec: RecoveredMap) -> bool:
    return rec.bank_map is not None and maps_equivalent(truth, rec.bank_map)
