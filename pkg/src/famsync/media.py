"""Durable byte-addressable media behind a volatile cache.

The model has two byte images: the committed durable image, and a volatile
image that reflects every write immediately.  Each cache line is in one of
three states:

    clean            volatile content equals durable content
    dirty_unflushed  written but not yet scheduled for persistence
    flushed_unfenced scheduled for persistence, not yet committed

A write moves its lines to dirty_unflushed.  A flush moves dirty_unflushed
lines in its range to flushed_unfenced.  A fence commits every
flushed_unfenced line into the durable image and makes it clean.

Crash semantics: at any instant, any subset of the flushed_unfenced lines
may persist; dirty_unflushed content never persists.  This is slightly
stronger than real hardware, where an unflushed line can also be evicted,
but it is safe for this library because the backing data area is only ever
written inside the sync protocol, after the undo log has been fenced.

The real_file backend maps write/flush/fence onto an mmap'd file where the
operating system's page cache plays the volatile role; it supports process
kill testing but not crash-state enumeration.
"""

from __future__ import annotations

import mmap
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Optional

from .errors import ConfigError, EnumerationBoundError, MediaError, RangeError

MODE_REAL_FILE = "real_file"
MODE_SIMULATED = "simulated"
MODE_SIMULATED_LATENCY = "simulated_with_latency"

_MODES = (MODE_REAL_FILE, MODE_SIMULATED, MODE_SIMULATED_LATENCY)


class LineState(Enum):
    CLEAN = "clean"
    DIRTY_UNFLUSHED = "dirty_unflushed"
    FLUSHED_UNFENCED = "flushed_unfenced"


@dataclass
class MediaConfig:
    capacity_bytes: int
    line_size: int = 64
    mode: str = MODE_SIMULATED
    latency_ns_per_flush: int = 0
    path: Optional[str] = None
    crash_enum_bound: int = 16

    def validate(self) -> None:
        ls = self.line_size
        if ls < 8 or ls > 4096 or (ls & (ls - 1)) != 0:
            raise ConfigError(f"line_size must be a power of two in [8, 4096], got {ls}")
        if self.capacity_bytes <= 0 or self.capacity_bytes % ls != 0:
            raise ConfigError(
                f"capacity_bytes must be a positive multiple of line_size, got {self.capacity_bytes}"
            )
        if self.mode not in _MODES:
            raise ConfigError(f"unknown media mode {self.mode!r}")
        if self.latency_ns_per_flush < 0:
            raise ConfigError("latency_ns_per_flush must be non-negative")
        if self.mode == MODE_REAL_FILE and not self.path:
            raise ConfigError("real_file mode requires a path")


@dataclass
class MediaCounters:
    writes: int = 0
    bytes_written: int = 0
    flushes: int = 0
    fences: int = 0
    reads: int = 0
    bytes_read: int = 0
    latency_ns: int = 0


@dataclass(frozen=True)
class CrashState:
    durable_image: bytes
    persisted_subset: frozenset = field(default_factory=frozenset)


class DurableMedia:
    """Common counter and hook plumbing for both backends.

    op_hook, when set, is invoked at the start of every persistence
    operation (write, flush, fence) and may raise to abort it; the crash
    harness uses this to stop a run at an exact operation boundary.
    """

    def __init__(self, config: MediaConfig):
        config.validate()
        self.config = config
        self.counters = MediaCounters()
        self.op_hook: Optional[Callable[[], None]] = None
        self.record_events = False
        self.events: list = []

    # -- bookkeeping helpers -------------------------------------------

    def _check_range(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.config.capacity_bytes:
            raise RangeError(
                f"range [{offset}, {offset + length}) outside capacity {self.config.capacity_bytes}"
            )

    def _begin_op(self, kind: str, offset: int, length: int) -> None:
        if self.op_hook is not None:
            self.op_hook()
        if self.record_events:
            self.events.append((kind, offset, length))

    def _lines(self, offset: int, length: int) -> range:
        ls = self.config.line_size
        return range(offset // ls, (offset + length - 1) // ls + 1)

    # -- interface -----------------------------------------------------

    def write(self, offset: int, data: bytes) -> None:
        raise NotImplementedError

    def flush(self, offset: int, length: int) -> None:
        raise NotImplementedError

    def fence(self) -> None:
        raise NotImplementedError

    def read(self, offset: int, length: int) -> bytes:
        raise NotImplementedError

    def durable_snapshot(self) -> bytes:
        raise NotImplementedError

    def enumerate_crash_states(self) -> Iterator[CrashState]:
        raise MediaError("crash-state enumeration requires the simulated backend")

    def close(self) -> None:
        pass


class SimulatedMedia(DurableMedia):
    def __init__(self, config: MediaConfig):
        super().__init__(config)
        cap = config.capacity_bytes
        self._durable = bytearray(cap)
        self._volatile = bytearray(cap)
        self._dirty: set[int] = set()
        self._flushed: set[int] = set()

    @classmethod
    def from_image(cls, image: bytes, config: MediaConfig) -> "SimulatedMedia":
        if len(image) != config.capacity_bytes:
            raise ConfigError("image size does not match configured capacity")
        media = cls(config)
        media._durable[:] = image
        media._volatile[:] = image
        return media

    def line_state(self, index: int) -> LineState:
        if index in self._dirty:
            return LineState.DIRTY_UNFLUSHED
        if index in self._flushed:
            return LineState.FLUSHED_UNFENCED
        return LineState.CLEAN

    def write(self, offset: int, data: bytes) -> None:
        if not data:
            return
        self._check_range(offset, len(data))
        self._begin_op("write", offset, len(data))
        self._volatile[offset : offset + len(data)] = data
        for line in self._lines(offset, len(data)):
            self._flushed.discard(line)
            self._dirty.add(line)
        self.counters.writes += 1
        self.counters.bytes_written += len(data)

    def flush(self, offset: int, length: int) -> None:
        if length == 0:
            return
        self._check_range(offset, length)
        self._begin_op("flush", offset, length)
        for line in self._lines(offset, length):
            if line in self._dirty:
                self._dirty.discard(line)
                self._flushed.add(line)
        self.counters.flushes += 1
        if self.config.mode == MODE_SIMULATED_LATENCY:
            self.counters.latency_ns += self.config.latency_ns_per_flush

    def fence(self) -> None:
        self._begin_op("fence", 0, 0)
        ls = self.config.line_size
        for line in sorted(self._flushed):
            start = line * ls
            self._durable[start : start + ls] = self._volatile[start : start + ls]
        self._flushed.clear()
        self.counters.fences += 1

    def read(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        if self.record_events:
            self.events.append(("read", offset, length))
        self.counters.reads += 1
        self.counters.bytes_read += length
        return bytes(self._volatile[offset : offset + length])

    def durable_snapshot(self) -> bytes:
        return bytes(self._durable)

    def enumerate_crash_states(self) -> Iterator[CrashState]:
        lines = sorted(self._flushed)
        k = len(lines)
        if k > self.config.crash_enum_bound:
            raise EnumerationBoundError(
                f"{k} flushed-unfenced lines exceed the enumeration bound "
                f"{self.config.crash_enum_bound}; use a smaller trace"
            )
        ls = self.config.line_size
        for bits in range(1 << k):
            image = bytearray(self._durable)
            chosen = []
            for i in range(k):
                if bits >> i & 1:
                    line = lines[i]
                    start = line * ls
                    image[start : start + ls] = self._volatile[start : start + ls]
                    chosen.append(line)
            yield CrashState(bytes(image), frozenset(chosen))


class RealFileMedia(DurableMedia):
    """File-backed media where a fence issues a ranged file synchronization.

    Durability against process kill comes from the page cache: everything
    written before the kill survives, which is a superset of any subset the
    simulated model can produce for the same trace.
    """

    def __init__(self, config: MediaConfig):
        super().__init__(config)
        assert config.path is not None
        created = not os.path.exists(config.path) or os.path.getsize(config.path) == 0
        self._fd = os.open(config.path, os.O_RDWR | os.O_CREAT, 0o644)
        if created:
            os.ftruncate(self._fd, config.capacity_bytes)
        elif os.path.getsize(config.path) != config.capacity_bytes:
            os.close(self._fd)
            raise ConfigError(
                f"existing file size {os.path.getsize(config.path)} does not match "
                f"capacity {config.capacity_bytes}"
            )
        self._mm = mmap.mmap(self._fd, config.capacity_bytes)
        self._pending: list[tuple[int, int]] = []

    def write(self, offset: int, data: bytes) -> None:
        if not data:
            return
        self._check_range(offset, len(data))
        self._begin_op("write", offset, len(data))
        self._mm[offset : offset + len(data)] = data
        self.counters.writes += 1
        self.counters.bytes_written += len(data)

    def flush(self, offset: int, length: int) -> None:
        if length == 0:
            return
        self._check_range(offset, length)
        self._begin_op("flush", offset, length)
        self._pending.append((offset, length))
        self.counters.flushes += 1
        if self.config.mode == MODE_SIMULATED_LATENCY:
            self.counters.latency_ns += self.config.latency_ns_per_flush

    def fence(self) -> None:
        self._begin_op("fence", 0, 0)
        page = mmap.PAGESIZE
        for offset, length in self._pending:
            start = offset - offset % page
            end = min(len(self._mm), -(-(offset + length) // page) * page)
            self._mm.flush(start, end - start)
        self._pending.clear()
        self.counters.fences += 1

    def read(self, offset: int, length: int) -> bytes:
        self._check_range(offset, length)
        if self.record_events:
            self.events.append(("read", offset, length))
        self.counters.reads += 1
        self.counters.bytes_read += length
        return bytes(self._mm[offset : offset + length])

    def durable_snapshot(self) -> bytes:
        # Best effort: the page cache view. Simulated mode is the authority
        # for crash semantics; this backend is for process-kill testing.
        return bytes(self._mm)

    def close(self) -> None:
        self._mm.flush()
        self._mm.close()
        os.close(self._fd)


def open_media(config: MediaConfig) -> DurableMedia:
    config.validate()
    if config.mode == MODE_REAL_FILE:
        return RealFileMedia(config)
    return SimulatedMedia(config)
