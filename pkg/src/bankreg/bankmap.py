"""XOR-based physical address to DRAM bank mapping.

A bank map is an ordered list of bit-position sets; bank bit ``i`` is the
parity of the physical-address bits listed in ``functions[i]``. Maps are
written in the ``b0:7⊕14 b1:15⊕20 ...`` notation used by DRAMA-style tools.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from bankreg import gf2

LINE_BITS = 6  # 64-byte line offset


class BankMapError(ValueError):
    pass


@dataclass(frozen=True)
class BankMap:
    functions: tuple[tuple[int, ...], ...]
    width: int = 32
    masks: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fns = tuple(tuple(int(b) for b in fn) for fn in self.functions)
        object.__setattr__(self, "functions", fns)
        # No functions is a legal single-bank map.
        masks = []
        for i, fn in enumerate(fns):
            if not fn:
                raise BankMapError(f"b{i}: empty function")
            if len(set(fn)) != len(fn):
                raise BankMapError(f"b{i}: repeated bit position")
            for b in fn:
                if b < 0 or b >= self.width:
                    raise BankMapError(f"b{i}: bit {b} outside {self.width}-bit address")
            masks.append(sum(1 << b for b in fn))
        if gf2.rank(masks) != len(masks):
            raise BankMapError("bank functions are linearly dependent")
        object.__setattr__(self, "masks", tuple(masks))

    @property
    def n_bits(self) -> int:
        return len(self.functions)

    @property
    def n_banks(self) -> int:
        return 1 << len(self.functions)

    @property
    def highest_bit(self) -> int:
        return max((max(fn) for fn in self.functions), default=-1)

    def bank_of(self, paddr: int) -> int:
        """Fast equivalent of :func:`paddr_to_bank` using precomputed masks."""
        bank = 0
        for i, m in enumerate(self.masks):
            if (paddr & m).bit_count() & 1:
                bank |= 1 << i
        return bank

    def banks_of(self, paddrs: np.ndarray) -> np.ndarray:
        paddrs = np.asarray(paddrs, dtype=np.uint64)
        bank = np.zeros(paddrs.shape, dtype=np.int64)
        for i, m in enumerate(self.masks):
            bit = np.bitwise_count(paddrs & np.uint64(m)).astype(np.int64) & 1
            bank |= bit << i
        return bank

    def spec(self) -> str:
        return format_map_spec(self)


@dataclass(frozen=True)
class RowColumnLayout:
    """Where the row index sits in a physical address.

    ``row = (paddr >> row_shift) & (2**row_width - 1)``; the column field is
    the bits between the line offset and the row field.
    """

    row_shift: int = 16
    row_width: int = 16

    def __post_init__(self):
        if self.row_shift < LINE_BITS:
            raise ValueError("row field overlaps the 64-byte line offset")
        if self.row_width < 1:
            raise ValueError("row_width must be positive")

    @property
    def column_mask(self) -> int:
        return ((1 << self.row_shift) - 1) & ~((1 << LINE_BITS) - 1)

    @property
    def n_rows(self) -> int:
        return 1 << self.row_width

    def row_of(self, paddr: int) -> int:
        return (paddr >> self.row_shift) & ((1 << self.row_width) - 1)

    def rows_of(self, paddrs: np.ndarray) -> np.ndarray:
        return (np.asarray(paddrs, dtype=np.uint64) >> np.uint64(self.row_shift)) & np.uint64(
            (1 << self.row_width) - 1
        )

    def check(self, width: int) -> None:
        if self.row_shift + self.row_width > width:
            raise ValueError(
                f"row field [{self.row_shift}, {self.row_shift + self.row_width}) "
                f"exceeds {width}-bit address"
            )


_TOKEN = re.compile(r"b(\d+)\s*:\s*(\d+(?:\s*(?:⊕|\+|\^|xor)\s*\d+)*)", re.IGNORECASE)
_SEP = re.compile(r"\s*(?:⊕|\+|\^|xor)\s*", re.IGNORECASE)


def parse_map_spec(text: str, width: int = 32, n_banks: int | None = None) -> BankMap:
    """Parse ``"b0:7⊕14 b1:15⊕20 ..."`` into a validated :class:`BankMap`.

    ``⊕``, ``+`` and ``^`` are accepted as XOR separators. Bit order inside a
    function is kept as written.
    """
    text = text.strip()
    found = {}
    pos = 0
    for m in _TOKEN.finditer(text):
        gap = text[pos:m.start()].strip(" \t\r\n,;")
        if gap:
            raise BankMapError(f"unparseable text in map spec: {gap!r}")
        pos = m.end()
        label = int(m.group(1))
        if label in found:
            raise BankMapError(f"duplicate bank bit label b{label}")
        found[label] = tuple(int(t) for t in _SEP.split(m.group(2).strip()))
    tail = text[pos:].strip(" \t\r\n,;")
    if tail:
        raise BankMapError(f"unparseable text in map spec: {tail!r}")
    if not found:
        raise BankMapError("empty map spec")
    if sorted(found) != list(range(len(found))):
        raise BankMapError(f"bank bit labels must be b0..b{len(found) - 1}")
    bm = BankMap(tuple(found[i] for i in range(len(found))), width=width)
    if n_banks is not None and bm.n_banks != n_banks:
        raise BankMapError(f"map has {bm.n_banks} banks, expected {n_banks}")
    return bm


def format_map_spec(bank_map: BankMap, sep: str = "⊕") -> str:
    return " ".join(
        f"b{i}:" + sep.join(str(b) for b in fn) for i, fn in enumerate(bank_map.functions)
    )


def paddr_to_bank(paddr: int, bank_map: BankMap) -> int:
    """Bank index of ``paddr``: bit i is the XOR of the address bits in function i."""
    bank = 0
    for i, fn in enumerate(bank_map.functions):
        res = 0
        for bit_pos in fn:
            res ^= (paddr >> bit_pos) & 1
        if res == 1:
            bank |= 1 << i
    return bank


def maps_equivalent(a: BankMap, b: BankMap) -> bool:
    """True iff both maps partition the address space identically (up to bank labels)."""
    return gf2.same_span(a.masks, b.masks)


class AddressSpaceError(ValueError):
    pass


@dataclass
class _Solution:
    """Affine solution space ``{x : F x = bank}`` restricted to line-aligned addresses."""

    free_bits: list[int]
    pivots: list[tuple[int, int, int]]  # (pivot bit, rest-of-row mask, target bit)

    @property
    def kernel(self) -> list[int]:
        out = []
        for f in self.free_bits:
            v = 1 << f
            for p, rest, _ in self.pivots:
                if rest >> f & 1:
                    v |= 1 << p
            out.append(v)
        return out


def _solve(bank: int, bank_map: BankMap) -> _Solution:
    width = bank_map.width
    line_mask = ((1 << width) - 1) & ~((1 << LINE_BITS) - 1)
    # Augment each row with its target bit above the address width.
    tbit = 1 << width
    rows = []
    for i, m in enumerate(bank_map.masks):
        r = m & line_mask
        if bank >> i & 1:
            r |= tbit
        rows.append(r)
    reduced = gf2.rref(rows, list(range(LINE_BITS, width)))
    pivot_cols = {c for c, _ in reduced}
    # A row that reduces to the bare target bit demands 0 == 1.
    if any(r == tbit for r in _residuals(rows, reduced)):
        raise AddressSpaceError(f"bank {bank} unreachable with line-aligned addresses")
    pivots = [(c, r & ~tbit & ~(1 << c), 1 if r & tbit else 0) for c, r in reduced]
    free = [b for b in range(LINE_BITS, width) if b not in pivot_cols]
    return _Solution(free, pivots)


def _residuals(rows: list[int], reduced: list[tuple[int, int]]) -> list[int]:
    out = []
    for r in rows:
        for c, pr in reduced:
            if r >> c & 1:
                r ^= pr
        out.append(r)
    return out


def available_addresses(bank: int, bank_map: BankMap) -> int:
    return 1 << len(_solve(bank, bank_map).free_bits)


def available_rows(bank: int, bank_map: BankMap, layout: RowColumnLayout) -> int:
    """Number of distinct row indices among line addresses that map to ``bank``."""
    sol = _solve(bank, bank_map)
    row_mask = (1 << layout.row_width) - 1
    proj = [(v >> layout.row_shift) & row_mask for v in sol.kernel]
    return 1 << gf2.rank(proj)


def _scatter(values: np.ndarray, positions: list[int]) -> np.ndarray:
    out = np.zeros(values.shape, dtype=np.uint64)
    for j, p in enumerate(positions):
        out |= ((values >> np.uint64(j)) & np.uint64(1)) << np.uint64(p)
    return out


def addresses_for_bank(
    bank: int,
    n: int,
    layout: RowColumnLayout,
    bank_map: BankMap,
    distinct_rows: bool = False,
    seed: int | np.random.Generator = 0,
    exclude: set[int] | None = None,
) -> list[int]:
    """Draw ``n`` distinct line addresses that all map to ``bank``.

    The bank constraints are solved over GF(2); free address bits are sampled
    uniformly without replacement. With ``distinct_rows`` every returned
    address also has its own row index under ``layout``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= bank < bank_map.n_banks:
        raise ValueError(f"bank {bank} out of range")
    layout.check(bank_map.width)
    sol = _solve(bank, bank_map)
    nfree = len(sol.free_bits)
    if nfree > 62:
        raise AddressSpaceError("address space too wide for sampling")
    exclude = exclude or set()
    if distinct_rows:
        cap = available_rows(bank, bank_map, layout)
        what = "distinct rows"
    else:
        cap = 1 << nfree
        what = "addresses"
    if n > cap:
        raise AddressSpaceError(f"bank {bank} has only {cap} {what}, requested {n}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pivot_rows = [(np.uint64(p), np.uint64(rest), t) for p, rest, t in sol.pivots]
    row_mask = np.uint64((1 << layout.row_width) - 1)
    shift = np.uint64(layout.row_shift)

    picked: list[np.ndarray] = []
    have = 0
    seen_addr = np.empty(0, dtype=np.uint64)
    seen_rows = np.empty(0, dtype=np.uint64)
    excl = np.fromiter(exclude, dtype=np.uint64, count=len(exclude)) if exclude else None
    attempts = 0
    while have < n:
        attempts += 1
        if attempts > 10_000:
            raise AddressSpaceError(f"could not draw {n} {what} for bank {bank}")
        batch = max(2 * (n - have), 1024)
        draws = rng.integers(0, 1 << nfree, size=batch, dtype=np.uint64, endpoint=False)
        # Pivot bits are fixed up from the free bits and the target bank bit.
        addr = _scatter(draws, sol.free_bits)
        for p, rest, t in pivot_rows:
            bit = (np.bitwise_count(addr & rest).astype(np.uint64) & np.uint64(1)) ^ np.uint64(t)
            addr |= bit << p
        # First occurrence keeps the seeded draw order.
        _, first = np.unique(addr, return_index=True)
        addr = addr[np.sort(first)]
        addr = addr[~np.isin(addr, seen_addr)]
        if excl is not None:
            addr = addr[~np.isin(addr, excl)]
        if distinct_rows:
            rows = (addr >> shift) & row_mask
            _, first = np.unique(rows, return_index=True)
            keep = np.sort(first)
            addr, rows = addr[keep], rows[keep]
            fresh = ~np.isin(rows, seen_rows)
            addr, rows = addr[fresh], rows[fresh]
            seen_rows = np.concatenate([seen_rows, rows[: n - have]])
        addr = addr[: n - have]
        seen_addr = np.concatenate([seen_addr, addr])
        picked.append(addr)
        have += len(addr)
    return [int(a) for a in np.concatenate(picked)]


def random_map(n_bits: int, width: int, seed: int = 0, max_terms: int = 6, low_bit: int = LINE_BITS) -> BankMap:
    """Random linearly independent XOR map, for property tests and hidden-map runs."""
    rng = np.random.default_rng(seed)
    while True:
        fns = []
        for _ in range(n_bits):
            k = int(rng.integers(1, max_terms + 1))
            bits = rng.choice(np.arange(low_bit, width), size=min(k, width - low_bit), replace=False)
            fns.append(tuple(sorted(int(b) for b in bits)))
        masks = [sum(1 << b for b in fn) for fn in fns]
        if gf2.rank(masks) == n_bits:
            return BankMap(tuple(fns), width=width)


@dataclass(frozen=True)
class Platform:
    name: str
    map_spec: str
    width: int
    tRC_ns: float


PLATFORMS: dict[str, Platform] = {
    "pi4": Platform("Raspberry Pi 4", "b0:12 b1:13 b2:14", 31, 60.0),
    "pi5": Platform("Raspberry Pi 5", "b0:12 b1:13 b2:14 b3:31", 32, 60.0),
    "intel": Platform(
        "Intel Coffee Lake",
        "b0:7⊕14 b1:15⊕20 b2:16⊕21 b3:17⊕22 b4:18⊕23 b5:19⊕24 b6:8⊕9⊕12⊕13⊕18⊕19",
        35,
        47.0,
    ),
    "agx": Platform(
        "Jetson Orin AGX",
        "b0:11⊕14⊕16⊕20⊕21⊕22⊕33 "
        "b1:9⊕11⊕12⊕16⊕19⊕23⊕27⊕28 "
        "b2:12⊕13⊕18⊕22⊕25⊕29⊕30⊕31 "
        "b3:10⊕11⊕12⊕17⊕19⊕20⊕23⊕32 "
        "b4:10⊕11⊕13⊕14⊕18⊕27⊕28⊕34 "
        "b5:11⊕12⊕13⊕16⊕19⊕24⊕33⊕35 "
        "b6:10⊕13⊕7⊕21⊕24⊕25⊕26⊕29⊕34 "
        "b7:14⊕15⊕17⊕21⊕25⊕28⊕31⊕34⊕35",
        36,
        60.0,
    ),
    # Simulated SoC: 8-bank DDR3 with a direct map on bits 9-11.
    "firesim": Platform("FireSim DDR3", "b0:9 b1:10 b2:11", 32, 47.0),
}


def platform_map(name: str) -> BankMap:
    p = PLATFORMS[name]
    return parse_map_spec(p.map_spec, width=p.width)


def resolve_map(text: str, width: int | None = None) -> BankMap:
    """Accept either a platform name or an inline map spec."""
    key = text.strip().lower()
    if key in PLATFORMS:
        bm = platform_map(key)
        if width is not None and width != bm.width:
            bm = BankMap(bm.functions, width=width)
        return bm
    return parse_map_spec(text, width=width or 32)
