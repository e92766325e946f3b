"""First-fit allocator living inside the region's data area.

The allocator itself contains no crash-consistency logic at all: every
metadata store goes through the interposition layer, so the undo log makes
any crash land on the last synced heap state automatically.  That
independence between logging and allocation policy is the design point.

Data-area layout, all offsets 8-byte aligned and restart-stable:

    0..8    heap magic
    8..16   root offset (0 = unset), the application's entry object
    16..24  free list head (0 = empty)
    24..32  high-water bump offset
    32..    blocks: u64 block size, then the user bytes; free blocks keep
            the next-free offset in their first user word
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

from . import engine
from .errors import CorruptionError, FamsyncError, OutOfMemoryError
from .interpose import _write_raw
from .region import PersistentRegion

HEAP_MAGIC = int.from_bytes(b"FAMHEAP1", "little")
HEADER_SIZE = 32
_OFF_MAGIC = 0
_OFF_ROOT = 8
_OFF_FREE = 16
_OFF_HIGH = 24
MIN_BLOCK = 16

_U64 = struct.Struct("<Q")


def _pad8(n: int) -> int:
    return (n + 7) & ~7


@dataclass
class HeapWalk:
    initialized: bool
    ok: bool
    errors: list = field(default_factory=list)
    free_blocks: list = field(default_factory=list)
    live_blocks: list = field(default_factory=list)
    high_water: int = HEADER_SIZE
    root_offset: int = 0


def walk_image(data: bytes) -> HeapWalk:
    """Validate heap structure over a raw data-area image.

    Checks that the free list is acyclic, that block sizes tile the used
    area exactly with no gap or overlap, and that root and free pointers
    land on blocks.  Used directly by the crash harness on recovered
    images.
    """

    def u64(off: int) -> int:
        return _U64.unpack_from(data, off)[0]

    if len(data) < HEADER_SIZE:
        return HeapWalk(False, False, errors=["data area smaller than a heap header"])
    if u64(_OFF_MAGIC) == 0:
        return HeapWalk(False, True)
    walk = HeapWalk(True, True)
    if u64(_OFF_MAGIC) != HEAP_MAGIC:
        walk.ok = False
        walk.errors.append("bad heap magic")
        return walk
    root = u64(_OFF_ROOT)
    free_head = u64(_OFF_FREE)
    high = u64(_OFF_HIGH)
    walk.high_water = high
    walk.root_offset = root
    if high < HEADER_SIZE or high > len(data):
        walk.ok = False
        walk.errors.append(f"high water {high} outside the data area")
        return walk

    free_set = set()
    cursor = free_head
    while cursor:
        if cursor in free_set:
            walk.ok = False
            walk.errors.append(f"free list cycle at {cursor}")
            return walk
        if cursor < HEADER_SIZE or cursor + MIN_BLOCK > high:
            walk.ok = False
            walk.errors.append(f"free block {cursor} outside the used area")
            return walk
        free_set.add(cursor)
        cursor = u64(cursor + 8)

    pos = HEADER_SIZE
    blocks = {}
    while pos < high:
        size = u64(pos)
        if size < MIN_BLOCK or size % 8 != 0 or pos + size > high:
            walk.ok = False
            walk.errors.append(f"block at {pos} has impossible size {size}")
            return walk
        blocks[pos] = size
        pos += size
    if pos != high:
        walk.ok = False
        walk.errors.append("blocks do not tile up to the high-water mark")
        return walk

    stray = free_set - blocks.keys()
    if stray:
        walk.ok = False
        walk.errors.append(f"free entries {sorted(stray)} are not block starts")
        return walk
    walk.free_blocks = sorted((off, blocks[off]) for off in free_set)
    walk.live_blocks = sorted(
        (off, size) for off, size in blocks.items() if off not in free_set
    )
    if root:
        if root - 8 not in blocks or root - 8 in free_set:
            walk.ok = False
            walk.errors.append(f"root {root} does not point into a live block")
    return walk


class Heap:
    """Handle over an attached heap; allocation is serialized by one lock."""

    def __init__(self, region: PersistentRegion, debug: bool = False):
        self.region = region
        self.debug = debug
        self._lock = threading.RLock()

    # -- attach ----------------------------------------------------------

    @classmethod
    def attach(cls, region: PersistentRegion, debug: bool = False, syncer=None) -> "Heap":
        """Attach to the region's heap, formatting an empty one if absent.

        Formatting writes the header through the interposition layer and
        commits it with one sync (syncer overrides how, for baselines with
        their own durability protocol).
        """
        heap = cls(region, debug)
        magic = heap._u64(_OFF_MAGIC)
        if magic == 0:
            with region.lock.shared():
                heap._store_u64(_OFF_MAGIC, HEAP_MAGIC)
                heap._store_u64(_OFF_ROOT, 0)
                heap._store_u64(_OFF_FREE, 0)
                heap._store_u64(_OFF_HIGH, HEADER_SIZE)
            if syncer is not None:
                syncer()
            else:
                engine.fa_msync(region)
        elif magic != HEAP_MAGIC:
            raise CorruptionError("data area holds something that is not a heap")
        else:
            walk = heap.walk()
            if not walk.ok:
                raise CorruptionError("; ".join(walk.errors))
        return heap

    # -- word accessors ---------------------------------------------------

    def _u64(self, offset: int) -> int:
        return _U64.unpack_from(self.region.working, offset)[0]

    def _store_u64(self, offset: int, value: int) -> None:
        _write_raw(self.region, offset, _U64.pack(value))

    # -- allocation --------------------------------------------------------

    def alloc(self, size: int) -> int:
        """Return the data-area offset of a block with at least size bytes."""
        if size < 1:
            raise FamsyncError("allocation size must be positive")
        need = 8 + _pad8(max(size, 8))
        # Region lock outside the heap lock, everywhere: callers already
        # inside a shared section reenter it for free, and a bare caller
        # blocked by a pending sync cannot be holding the heap lock.
        with self.region.lock.shared(), self._lock:
            prev = 0
            cursor = self._u64(_OFF_FREE)
            while cursor:
                block_size = self._u64(cursor)
                if block_size >= need:
                    nxt = self._u64(cursor + 8)
                    if prev:
                        self._store_u64(prev + 8, nxt)
                    else:
                        self._store_u64(_OFF_FREE, nxt)
                    return cursor + 8
                prev, cursor = cursor, self._u64(cursor + 8)
            high = self._u64(_OFF_HIGH)
            if high + need > self.region.config.region_size:
                raise OutOfMemoryError(
                    f"need {need} bytes, {self.region.config.region_size - high} remain"
                )
            self._store_u64(high, need)
            self._store_u64(_OFF_HIGH, high + need)
            return high + 8

    def free(self, offset: int) -> None:
        block = offset - 8
        with self.region.lock.shared(), self._lock:
            if self.debug:
                walk = self.walk()
                live = {off for off, _ in walk.live_blocks}
                if block not in live:
                    raise FamsyncError(
                        f"free of {offset}: not a live block (double free or bad offset)"
                    )
            self._store_u64(block + 8, self._u64(_OFF_FREE))
            self._store_u64(_OFF_FREE, block)

    # -- root object --------------------------------------------------------

    def root_set(self, offset: int) -> None:
        with self.region.lock.shared(), self._lock:
            self._store_u64(_OFF_ROOT, offset)

    def root_get(self) -> int:
        return self._u64(_OFF_ROOT)

    def walk(self) -> HeapWalk:
        return walk_image(bytes(self.region.working))
