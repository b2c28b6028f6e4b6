"""GF(2) linear algebra over Python ints used as bit vectors.

Bit ``i`` of an int is coordinate ``i`` of the vector. All routines are
polynomial: elimination touches each (vector, pivot) pair at most once.
"""

from __future__ import annotations

from typing import Iterable, Sequence


def parity(x: int) -> int:
    return x.bit_count() & 1


def echelon(vectors: Iterable[int]) -> dict[int, int]:
    """Reduce ``vectors`` to an echelon basis keyed by pivot (highest set bit).

    Every basis vector has a distinct leading bit; zero vectors and vectors
    already in the span are dropped.
    """
    basis: dict[int, int] = {}
    for v in vectors:
        while v:
            top = v.bit_length() - 1
            b = basis.get(top)
            if b is None:
                basis[top] = v
                break
            v ^= b
    return basis


def insert(basis: dict[int, int], v: int) -> bool:
    """Add ``v`` to an echelon basis in place; True if the rank grew."""
    while v:
        top = v.bit_length() - 1
        b = basis.get(top)
        if b is None:
            basis[top] = v
            return True
        v ^= b
    return False


def rank(vectors: Iterable[int]) -> int:
    return len(echelon(vectors))


def in_span(v: int, basis: dict[int, int]) -> bool:
    while v:
        b = basis.get(v.bit_length() - 1)
        if b is None:
            return False
        v ^= b
    return True


def same_span(a: Sequence[int], b: Sequence[int]) -> bool:
    ra = rank(a)
    return ra == rank(b) and ra == rank(list(a) + list(b))


def rref(rows: Sequence[int], columns: Sequence[int] | None = None) -> list[tuple[int, int]]:
    """Reduced row echelon form.

    Returns ``(pivot_column, row)`` pairs; each pivot column is set in its
    own row only. ``columns`` fixes the pivot search order (default: from the
    lowest bit upward), which decides which bit of each row becomes the pivot.
    """
    work = [r for r in rows if r]
    if columns is None:
        top = max((r.bit_length() for r in work), default=0)
        columns = range(top)
    out: list[tuple[int, int]] = []
    for col in columns:
        bit = 1 << col
        idx = next((i for i, r in enumerate(work) if r & bit), None)
        if idx is None:
            continue
        piv = work.pop(idx)
        work = [r ^ piv if r & bit else r for r in work]
        out = [(c, r ^ piv if r & bit else r) for c, r in out]
        out.append((col, piv))
        if not work:
            break
    return out


def nullspace(rows: Sequence[int], columns: Sequence[int]) -> list[int]:
    """Basis of ``{x supported on columns : parity(x & r) == 0 for all rows}``."""
    colset = set(columns)
    mask = sum(1 << c for c in colset)
    reduced = rref([r & mask for r in rows], sorted(colset))
    pivots = {c for c, _ in reduced}
    basis = []
    for free in sorted(colset - pivots):
        v = 1 << free
        for c, r in reduced:
            if r >> free & 1:
                v |= 1 << c
        basis.append(v)
    return basis


def bits_of(x: int) -> list[int]:
    out = []
    while x:
        low = x & -x
        out.append(low.bit_length() - 1)
        x ^= low
    return out
