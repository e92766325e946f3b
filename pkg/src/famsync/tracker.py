"""Volatile per-thread dirty lists.

The sync engine copies exactly the ranges named here, so it never reads the
persistent log to find modified bytes.  Inserts are O(1) appends with no
dedup; merging happens once per sync.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable


@dataclass
class DirtyRecord:
    offset: int
    size: int


@dataclass
class DirtyList:
    records: list[DirtyRecord] = field(default_factory=list)
    total_logged_bytes: int = 0

    def record(self, offset: int, size: int) -> None:
        self.records.append(DirtyRecord(offset, size))
        self.total_logged_bytes += size

    def clear(self) -> None:
        self.records.clear()
        self.total_logged_bytes = 0


def coalesce(lists: Iterable[DirtyList]) -> list[tuple[int, int]]:
    """Merge all lists' records into sorted, disjoint (offset, size) ranges.

    Overlapping and back-to-back ranges are fused; the union of covered
    bytes is preserved exactly.
    """
    spans = sorted(
        (r.offset, r.offset + r.size) for lst in lists for r in lst.records
    )
    merged: list[tuple[int, int]] = []
    for start, end in spans:
        if merged and start <= merged[-1][1]:
            prev_start, prev_end = merged[-1]
            merged[-1] = (prev_start, max(prev_end, end))
        else:
            merged.append((start, end))
    return [(start, end - start) for start, end in merged]


def widen_to_lines(
    ranges: Iterable[tuple[int, int]], line_size: int, region_size: int
) -> list[tuple[int, int]]:
    """Widen ranges to line boundaries and re-merge.

    Whole-line copies mirror cache-line granularity writeback; the widening
    bytes come from the working image, which owns full line content, so
    copying them is always safe.
    """
    widened = []
    for offset, size in ranges:
        start = offset - offset % line_size
        end = min(region_size, -(-(offset + size) // line_size) * line_size)
        widened.append(DirtyRecord(start, end - start))
    return coalesce([DirtyList(records=widened)])


def clear_all(lists: Iterable[DirtyList]) -> None:
    for lst in lists:
        lst.clear()
