"""Store interposition: the call surface compiler instrumentation would emit.

on_store is the per-store entry point: a range check, then an undo append
of the bytes about to be overwritten plus a dirty record.  tracked_write,
tracked_memcpy, tracked_memset and tracked_memmove fuse the logging call
with the mutation for callers without instrumentation, taking the region's
shared lock around the pair so a concurrent sync never sees a store whose
log entry is missing.

Two threads must not modify overlapping ranges between consecutive syncs;
the engine's debug mode checks that contract at sync time.
"""

from __future__ import annotations

from .errors import RangeError
from .region import PersistentRegion

_SCALAR_SIZES = (1, 2, 4, 8)


def on_store(region: PersistentRegion, addr: int, size: int) -> None:
    """Log a scalar store about to hit addr; no-op outside the working range.

    Must be called before the store mutates the working image, because the
    undo payload is read from it here.  Callers driving this directly are
    responsible for holding the region's shared lock across the pair, as
    tracked_write does.
    """
    if not region.in_working_range(addr):
        return
    if size not in _SCALAR_SIZES:
        raise RangeError(f"scalar store size must be one of {_SCALAR_SIZES}, got {size}")
    _log_range(region, addr - region.config.working_base, size)


def _log_range(region: PersistentRegion, offset: int, size: int) -> None:
    if size < 1 or offset + size > region.config.region_size:
        raise RangeError(
            f"store range [{offset}, {offset + size}) outside region of "
            f"{region.config.region_size} bytes"
        )
    if region.undo_logging:
        original = bytes(region.working[offset : offset + size])
        region.log_for_current_thread().append(offset, original)
    region.dirty_for_current_thread().record(offset, size)


def _write_raw(region: PersistentRegion, offset: int, data: bytes) -> None:
    if not data:
        return
    _log_range(region, offset, len(data))
    region.working[offset : offset + len(data)] = data


def tracked_write(region: PersistentRegion, addr: int, data: bytes) -> None:
    if not data:
        return
    offset = region.to_offset(addr)
    with region.lock.shared():
        _write_raw(region, offset, data)


def tracked_memcpy(region: PersistentRegion, dst_addr: int, src: bytes) -> None:
    tracked_write(region, dst_addr, src)


def tracked_memset(region: PersistentRegion, dst_addr: int, value: int, length: int) -> None:
    if length == 0:
        return
    offset = region.to_offset(dst_addr)
    with region.lock.shared():
        _write_raw(region, offset, bytes([value & 0xFF]) * length)


def tracked_memmove(region: PersistentRegion, dst_addr: int, src_addr: int, length: int) -> None:
    if length == 0:
        return
    dst = region.to_offset(dst_addr)
    src = region.to_offset(src_addr)
    if src + length > region.config.region_size:
        raise RangeError("memmove source extends past the region")
    with region.lock.shared():
        # Materializing the source first handles overlap in either direction.
        data = bytes(region.working[src : src + length])
        _write_raw(region, dst, data)
