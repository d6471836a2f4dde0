"""Fuzzy title deduplication on Levenshtein distances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .records import Record, normalize_text, survivor_key

DEFAULT_THRESHOLD = 5


def _raw_levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cost = prev[j - 1] + (ca != cb)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            cur.append(min(cost, ins, dele))
        prev = cur
    return prev[-1]


def levenshtein(a: str, b: str) -> int:
    """Edit distance between the normalized forms of ``a`` and ``b``.

    Insertions, deletions and substitutions each cost one. Normalization is
    NFC plus whitespace collapsing; case is significant.
    """
    return _raw_levenshtein(normalize_text(a), normalize_text(b))


def bounded_levenshtein(a: str, b: str, limit: int) -> Optional[int]:
    """Distance if it is at most ``limit``, else None.

    Only the diagonal band of width ``2*limit+1`` is filled, and the scan stops
    as soon as every cell in a row exceeds the limit.
    """
    a, b = normalize_text(a), normalize_text(b)
    if abs(len(a) - len(b)) > limit:
        return None
    if a == b:
        return 0
    n, m = len(a), len(b)
    big = limit + 1
    prev = [j if j <= limit else big for j in range(m + 1)]
    for i in range(1, n + 1):
        lo, hi = max(1, i - limit), min(m, i + limit)
        cur = [big] * (m + 1)
        cur[0] = i if i <= limit else big
        ca = a[i - 1]
        row_min = cur[0]
        for j in range(lo, hi + 1):
            v = min(prev[j - 1] + (ca != b[j - 1]), cur[j - 1] + 1, prev[j] + 1)
            cur[j] = v if v <= limit else big
            if v < row_min:
                row_min = v
        if row_min > limit:
            return None
        prev = cur
    return prev[m] if prev[m] <= limit else None


@dataclass(frozen=True)
class DissimilarityMatrix:
    labels: tuple[str, ...]
    entries: np.ndarray

    @property
    def n(self) -> int:
        return len(self.labels)


def dissimilarity_matrix(titles: Sequence[tuple[str, str]]) -> DissimilarityMatrix:
    """Full pairwise distance matrix for ``(id, title)`` pairs."""
    if not titles:
        raise ValueError("at least one title is required")
    labels = tuple(t[0] for t in titles)
    norm = [normalize_text(t[1]) for t in titles]
    n = len(norm)
    d = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = _raw_levenshtein(norm[i], norm[j])
    d.setflags(write=False)
    return DissimilarityMatrix(labels, d)


def duplicate_pairs(matrix: DissimilarityMatrix, threshold: int = DEFAULT_THRESHOLD) -> list[tuple[int, int]]:
    """Off-diagonal index pairs ``(i, j)``, ``i < j``, with distance strictly below ``threshold``."""
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    ii, jj = np.nonzero(np.triu(matrix.entries < threshold, k=1))
    return [(int(i), int(j)) for i, j in zip(ii, jj)]


def find_duplicate_pairs(titles: Sequence[str], threshold: int = DEFAULT_THRESHOLD) -> list[tuple[int, int, int]]:
    """``(i, j, distance)`` for all pairs closer than ``threshold``, without building the matrix."""
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    norm = [normalize_text(t) for t in titles]
    order = sorted(range(len(norm)), key=lambda i: len(norm[i]))
    out = []
    limit = threshold - 1
    for pos, i in enumerate(order):
        li = len(norm[i])
        for j in order[pos + 1:]:
            if len(norm[j]) - li > limit:
                break
            dist = bounded_levenshtein(norm[i], norm[j], limit)
            if dist is not None:
                out.append((min(i, j), max(i, j), dist))
    out.sort()
    return out


def merge_duplicates(records: Sequence[Record], pairs) -> tuple[list[Record], list[Record]]:
    """Collapse each connected component of the pair graph to one survivor.

    The survivor is the earliest-dated record, then the highest-priority
    source. Outputs keep input order.
    """
    n = len(records)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for pair in pairs:
        i, j = pair[0], pair[1]
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"pair {pair!r} out of range for {n} records")
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    drop = set()
    for members in groups.values():
        if len(members) > 1:
            keep = min(members, key=lambda i: survivor_key(records[i]))
            drop.update(m for m in members if m != keep)
    kept = [r for i, r in enumerate(records) if i not in drop]
    removed = [r for i, r in enumerate(records) if i in drop]
    return kept, removed
