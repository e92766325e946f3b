"""Persistent region lifecycle and the dual-range address model.

A region is one file exposed at two reserved address ranges: the working
range, which the application mutates at memory speed, and the backing
range on durable media at identical offsets.  The identity mapping makes
store interposition a pair of comparisons and one subtraction.

Backing file layout (little-endian):

    0..8    magic "FAMSYNC1"
    8..16   format version (1)
    16..24  region_size
    24..32  max_threads
    32..40  log slot size
    40..    max_threads undo log slots
    ...     data area, 4096-byte aligned

Opening a region recovers it first: any log slot left VALID by a crash is
rolled back before the working image is loaded from the durable data area.
"""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

from .errors import ConfigError, CorruptionError, FamsyncError, RangeError
from .media import DurableMedia
from .tracker import DirtyList
from .undolog import SLOT_HEADER, STATE_VALID, UndoLog, rollback_slot

FILE_MAGIC = b"FAMSYNC1"
FILE_VERSION = 1
FILE_HEADER = struct.Struct("<8sQQQQ")
FILE_HEADER_SIZE = FILE_HEADER.size


def _align4096(n: int) -> int:
    return -(-n // 4096) * 4096


@dataclass
class RegionConfig:
    region_size: int
    working_base: int = 1 << 40
    backing_base: int = 2 << 40
    reserve_size: int = 1 << 40
    max_threads: int = 16
    slot_size: int = 1 << 20

    def validate(self) -> None:
        if self.region_size <= 0:
            raise ConfigError("region_size must be positive")
        if self.max_threads < 1:
            raise ConfigError("max_threads must be at least 1")
        if self.slot_size < 64 or self.slot_size % 8 != 0 or self.slot_size >= 1 << 32:
            raise ConfigError("slot_size must be a multiple of 8 in [64, 2^32)")
        w0, w1 = self.working_base, self.working_base + self.reserve_size
        b0, b1 = self.backing_base, self.backing_base + self.reserve_size
        if max(w0, b0) < min(w1, b1):
            raise ConfigError("working and backing reserved ranges overlap")
        if self.region_size + self.log_area_size > self.reserve_size:
            raise ConfigError("region_size + log_area_size exceeds reserve_size")

    @property
    def log_area_size(self) -> int:
        return _align4096(FILE_HEADER_SIZE + self.max_threads * self.slot_size)

    @property
    def data_offset(self) -> int:
        return self.log_area_size

    @property
    def capacity_required(self) -> int:
        return self.data_offset + self.region_size

    def slot_offset(self, index: int) -> int:
        return FILE_HEADER_SIZE + index * self.slot_size


def pack_file_header(config: RegionConfig) -> bytes:
    return FILE_HEADER.pack(
        FILE_MAGIC, FILE_VERSION, config.region_size, config.max_threads, config.slot_size
    )


@dataclass
class FileHeader:
    version: int
    region_size: int
    max_threads: int
    slot_size: int

    @property
    def data_offset(self) -> int:
        return _align4096(FILE_HEADER_SIZE + self.max_threads * self.slot_size)

    def slot_offset(self, index: int) -> int:
        return FILE_HEADER_SIZE + index * self.slot_size


def read_file_header(raw: bytes) -> FileHeader:
    magic, version, region_size, max_threads, slot_size = FILE_HEADER.unpack_from(raw, 0)
    if magic != FILE_MAGIC:
        raise CorruptionError(f"bad region magic {magic!r}")
    if version != FILE_VERSION:
        raise CorruptionError(f"unsupported format version {version}")
    return FileHeader(version, region_size, max_threads, slot_size)


def recover_media(media: DurableMedia, slot_order=None) -> int:
    """Roll back every VALID slot on the media, then invalidate them durably.

    Returns the number of slots rolled back.  slot_order exists so tests can
    show the result is order-independent; threads log disjoint ranges, so it
    must be.
    """
    header = read_file_header(media.read(0, FILE_HEADER_SIZE))
    order = list(slot_order) if slot_order is not None else list(range(header.max_threads))
    recovered = []
    for index in order:
        slot_offset = header.slot_offset(index)
        state = SLOT_HEADER.unpack_from(media.read(slot_offset, SLOT_HEADER.size), 0)[0]
        if state != STATE_VALID:
            continue
        rollback_slot(
            media, slot_offset, header.slot_size, header.data_offset, header.region_size
        )
        recovered.append(slot_offset)
    for slot_offset in recovered:
        media.write(slot_offset, SLOT_HEADER.pack(0, 0, 0))
        media.flush(slot_offset, SLOT_HEADER.size)
    if recovered:
        media.fence()
    return len(recovered)


class RWLock:
    """Writer-preferring readers-writer lock with reentrant readers.

    Logging threads hold it shared around each log-and-store pair; the sync
    engine and recovery take it exclusive, so a sync never observes a store
    whose undo entry has not been appended yet.  Shared holds nest within a
    thread (a store op may sit inside a larger atomic section, as the heap
    and KV layers do) without deadlocking against a waiting writer.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0
        self._local = threading.local()

    def acquire_shared(self) -> None:
        depth = getattr(self._local, "depth", 0)
        with self._cond:
            if depth == 0:
                while self._writer or self._writers_waiting:
                    self._cond.wait()
            self._readers += 1
        self._local.depth = depth + 1

    def release_shared(self) -> None:
        self._local.depth -= 1
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_exclusive(self) -> None:
        with self._cond:
            self._writers_waiting += 1
            try:
                while self._writer or self._readers:
                    self._cond.wait()
            finally:
                self._writers_waiting -= 1
            self._writer = True

    def release_exclusive(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    @contextmanager
    def shared(self):
        self.acquire_shared()
        try:
            yield
        finally:
            self.release_shared()

    @contextmanager
    def exclusive(self):
        self.acquire_exclusive()
        try:
            yield
        finally:
            self.release_exclusive()


class PersistentRegion:
    def __init__(self, config: RegionConfig, media: DurableMedia, recovered_slots: int = 0):
        self.config = config
        self.media = media
        self.working = bytearray(config.region_size)
        self.logs = [
            UndoLog(i, config.slot_offset(i), config.slot_size, media)
            for i in range(config.max_threads)
        ]
        self.dirty = [DirtyList() for _ in range(config.max_threads)]
        self.sync_epoch = 0
        self.sync_history: list = []
        self.last_recovery_count = recovered_slots
        self.lock = RWLock()
        self.undo_logging = True
        self.debug_contract = False
        self._slot_map: dict[int, int] = {}
        self._slot_lock = threading.Lock()

    # -- lifecycle -----------------------------------------------------

    @classmethod
    def open(cls, config: RegionConfig, media: DurableMedia) -> "PersistentRegion":
        config.validate()
        if media.config.capacity_bytes < config.capacity_required:
            raise ConfigError(
                f"media capacity {media.config.capacity_bytes} below required "
                f"{config.capacity_required}"
            )
        raw = media.read(0, FILE_HEADER_SIZE)
        recovered = 0
        if raw == bytes(FILE_HEADER_SIZE):
            media.write(0, pack_file_header(config))
            media.flush(0, FILE_HEADER_SIZE)
            media.fence()
        else:
            header = read_file_header(raw)
            if (
                header.region_size != config.region_size
                or header.max_threads != config.max_threads
                or header.slot_size != config.slot_size
            ):
                raise ConfigError("on-media geometry does not match the supplied config")
            recovered = recover_media(media)
        region = cls(config, media, recovered)
        region.working[:] = media.read(config.data_offset, config.region_size)
        return region

    def close(self) -> None:
        self.media.close()

    # -- per-thread structures ------------------------------------------

    def slot_index(self) -> int:
        tid = threading.get_ident()
        with self._slot_lock:
            slot = self._slot_map.get(tid)
            if slot is None:
                slot = len(self._slot_map)
                if slot >= self.config.max_threads:
                    raise FamsyncError(
                        f"all {self.config.max_threads} thread log slots are in use"
                    )
                self._slot_map[tid] = slot
            return slot

    def log_for_current_thread(self) -> UndoLog:
        return self.logs[self.slot_index()]

    def dirty_for_current_thread(self) -> DirtyList:
        return self.dirty[self.slot_index()]

    # -- address math ----------------------------------------------------

    @property
    def line_size(self) -> int:
        return self.media.config.line_size

    def in_working_range(self, addr: int) -> bool:
        base = self.config.working_base
        return base <= addr < base + self.config.region_size

    def to_offset(self, addr: int) -> int:
        if not self.in_working_range(addr):
            raise RangeError(f"address {addr:#x} outside the working range")
        return addr - self.config.working_base

    def from_offset(self, offset: int) -> int:
        return self.config.working_base + offset

    def backing_address(self, offset: int) -> int:
        return self.config.backing_base + offset
