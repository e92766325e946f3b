"""The failure-atomic sync protocol and region recovery.

fa_msync makes the durable data area equal the working image, atomically
with respect to crashes, in three fenced steps:

    1. seal    write each touched slot's VALID header, flush headers and
               entry bytes, fence.  Every logged original is now durably
               recoverable before the data area is touched.
    2. copy    write each coalesced dirty range (widened to line
               boundaries) from the working image to the backing data
               area, flush, fence.
    3. retire  write each slot's INVALID header, flush, fence.

A crash before step 3's fence lands recovers to the previous epoch's
image by rolling the logs back; after it, to this epoch's image.  No
other durable data-area state is reachable, which is the whole contract.

The two-fence compatibility mode flushes the invalidation but defers its
fence to whatever fence comes next.  It saves one fence per sync at the
cost of a window after fa_msync returns in which a crash rolls back the
completed sync; the crash harness demonstrates exactly that violation.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tracker
from .errors import ContractViolationError
from .region import PersistentRegion, recover_media
from .undolog import decode_slot


@dataclass
class SyncReport:
    epoch: int
    entries_sealed: int
    logged_bytes: int
    coalesced_bytes: int
    bytes_copied: int
    fences_issued: int


def _ranges_from_logs(region: PersistentRegion) -> list[tuple[int, int]]:
    """Snapshot-NV style range discovery: read them back out of the log area.

    Exists to measure what the volatile dirty list saves; byte-for-byte the
    sync result must be identical to the default path.
    """
    lists = []
    for log in region.logs:
        if log.tail == 0:
            continue
        raw = region.media.read(log.slot_offset, log.slot_size)
        _, _, _, entries = decode_slot(raw, region.config.region_size)
        lst = tracker.DirtyList()
        for entry in entries:
            if entry.valid:
                lst.record(entry.offset, entry.size)
        lists.append(lst)
    return tracker.coalesce(lists)


def _check_contract(region: PersistentRegion) -> None:
    per_slot = [
        tracker.coalesce([lst]) for lst in region.dirty if lst.records
    ]
    covered: list[tuple[int, int]] = []
    for ranges in per_slot:
        for offset, size in ranges:
            for start, end in covered:
                if offset < end and start < offset + size:
                    raise ContractViolationError(
                        f"two threads wrote overlapping bytes near offset {max(offset, start)}"
                    )
        covered.extend((o, o + s) for o, s in ranges)


def fa_msync(
    region: PersistentRegion,
    *,
    fences: int = 3,
    sync_from_log: bool = False,
    copy_align: int | None = None,
) -> SyncReport:
    """Atomically propagate all modified ranges to the backing data area.

    Returns only when the modifications are durable (three-fence mode).
    copy_align widens copied ranges; it defaults to the media line size and
    is how the page-granularity baseline is modeled.
    """
    if fences not in (2, 3):
        raise ValueError("fences must be 2 or 3")
    media = region.media
    config = region.config
    align = copy_align if copy_align is not None else region.line_size
    with region.lock.exclusive():
        fences_before = media.counters.fences
        if region.debug_contract:
            _check_contract(region)
        entries_sealed = sum(log.appended for log in region.logs)
        logged_bytes = sum(log.logged_bytes for log in region.logs)

        for log in region.logs:
            log.seal()
        media.fence()

        if sync_from_log:
            ranges = _ranges_from_logs(region)
        else:
            ranges = tracker.coalesce(region.dirty)
        coalesced_bytes = sum(size for _, size in ranges)
        bytes_copied = 0
        for offset, size in tracker.widen_to_lines(ranges, align, config.region_size):
            media.write(config.data_offset + offset, bytes(region.working[offset : offset + size]))
            media.flush(config.data_offset + offset, size)
            bytes_copied += size
        media.fence()

        for log in region.logs:
            log.invalidate()
        if fences == 3:
            media.fence()

        tracker.clear_all(region.dirty)
        region.sync_epoch += 1
        report = SyncReport(
            epoch=region.sync_epoch,
            entries_sealed=entries_sealed,
            logged_bytes=logged_bytes,
            coalesced_bytes=coalesced_bytes,
            bytes_copied=bytes_copied,
            fences_issued=media.counters.fences - fences_before,
        )
        region.sync_history.append(report)
        return report


def recover_region(region: PersistentRegion) -> int:
    """Roll back every VALID slot and reload the working image.

    Normally runs inside region open; exposed for in-place recovery after
    a simulated failure.
    """
    with region.lock.exclusive():
        count = recover_media(region.media)
        region.working[:] = region.media.read(
            region.config.data_offset, region.config.region_size
        )
        for log in region.logs:
            log.tail = 0
            log.appended = 0
            log.logged_bytes = 0
        tracker.clear_all(region.dirty)
        region.last_recovery_count = count
        return count
