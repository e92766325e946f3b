"""Per-thread persistent undo logs.

Slot layout (little-endian) within the backing file:

    0..4    state   u32   0 = INVALID, 1 = VALID
    4..12   tail    u64   bytes of packed entries past the slot header
    12..16  seal    u32   CRC32 of the packed entry bytes [0, tail)
    16..    packed entries

Entry layout: 8-byte data-area offset, 4-byte size, 4-byte CRC32 over
(offset, size, payload), then the payload, zero-padded so the next entry
starts 8-byte aligned.  CRC32 is the usual reflected polynomial 0xEDB88320
with initial value 0xFFFFFFFF and a final XOR (zlib.crc32).

The per-entry checksum makes the tail advisory within one fence batch: the
header and entry lines may persist in any order, so recovery must tolerate
a durable tail pointing past torn entries.  The seal checksum closes a
second hazard the per-entry checksums cannot: after the slot is reused,
stale entries from an earlier, completed sync still carry valid per-entry
checksums, and a crash that persists the new header but not the new entry
bytes would otherwise roll back committed data.  A seal mismatch proves the
sealing fence never completed, which in turn proves the data area was never
touched, so rollback can be skipped entirely.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

from .errors import LogFullError
from .media import DurableMedia

STATE_INVALID = 0
STATE_VALID = 1

SLOT_HEADER = struct.Struct("<IQI")  # state, tail, seal crc
ENTRY_HEADER = struct.Struct("<QII")  # offset, size, entry crc
SLOT_HEADER_SIZE = SLOT_HEADER.size
ENTRY_HEADER_SIZE = ENTRY_HEADER.size


def _pad8(n: int) -> int:
    return (n + 7) & ~7


def entry_length(size: int) -> int:
    return ENTRY_HEADER_SIZE + _pad8(size)


def entry_crc(offset: int, payload: bytes) -> int:
    return zlib.crc32(struct.pack("<QI", offset, len(payload)) + payload)


def pack_entry(offset: int, payload: bytes) -> bytes:
    size = len(payload)
    head = ENTRY_HEADER.pack(offset, size, entry_crc(offset, payload))
    return head + payload + b"\0" * (_pad8(size) - size)


@dataclass
class DecodedEntry:
    offset: int
    size: int
    crc: int
    payload: bytes
    valid: bool


class UndoLog:
    """One thread's log slot.

    Appends are thread-confined and unfenced; seal and invalidate are
    called only by the sync engine under the exclusive lock.  A volatile
    mirror of the entry area backs the seal checksum and statistics so the
    hot path never reads the media.
    """

    def __init__(self, index: int, slot_offset: int, slot_size: int, media: DurableMedia):
        self.index = index
        self.slot_offset = slot_offset
        self.slot_size = slot_size
        self.media = media
        self.tail = 0
        self.appended = 0
        self.logged_bytes = 0
        self._mirror = bytearray(slot_size - SLOT_HEADER_SIZE)

    @property
    def capacity(self) -> int:
        return self.slot_size - SLOT_HEADER_SIZE

    def append(self, offset: int, original: bytes) -> None:
        entry = pack_entry(offset, original)
        if self.tail + len(entry) > self.capacity:
            raise LogFullError(
                f"slot {self.index}: entry of {len(entry)} bytes does not fit "
                f"({self.capacity - self.tail} free)"
            )
        self.media.write(self.slot_offset + SLOT_HEADER_SIZE + self.tail, entry)
        self._mirror[self.tail : self.tail + len(entry)] = entry
        self.tail += len(entry)
        self.appended += 1
        self.logged_bytes += len(original)

    def seal(self) -> None:
        """Write the VALID header and flush header plus entries; no fence."""
        if self.tail == 0:
            return
        seal_crc = zlib.crc32(bytes(self._mirror[: self.tail]))
        self.media.write(self.slot_offset, SLOT_HEADER.pack(STATE_VALID, self.tail, seal_crc))
        self.media.flush(self.slot_offset, SLOT_HEADER_SIZE + self.tail)

    def invalidate(self) -> None:
        """Write the INVALID header and flush it; no fence, resets volatile state."""
        if self.tail == 0:
            return
        self.media.write(self.slot_offset, SLOT_HEADER.pack(STATE_INVALID, 0, 0))
        self.media.flush(self.slot_offset, SLOT_HEADER_SIZE)
        self.tail = 0
        self.appended = 0
        self.logged_bytes = 0


def decode_slot(slot_bytes: bytes, region_size: int) -> tuple[int, int, int, list[DecodedEntry]]:
    """Decode a raw slot image into (state, tail, seal_crc, entries).

    Entries are decoded up to the durable tail; decoding stops at the first
    entry that is malformed or fails its checksum.  The stopped-at entry is
    included with valid=False so inspection tools can show it.
    """
    state, tail, seal_crc = SLOT_HEADER.unpack_from(slot_bytes, 0)
    area = slot_bytes[SLOT_HEADER_SIZE:]
    tail = min(tail, len(area))
    entries: list[DecodedEntry] = []
    pos = 0
    while pos + ENTRY_HEADER_SIZE <= tail:
        offset, size, crc = ENTRY_HEADER.unpack_from(area, pos)
        if size < 1 or offset + size > region_size or pos + entry_length(size) > tail:
            entries.append(DecodedEntry(offset, size, crc, b"", False))
            break
        payload = bytes(area[pos + ENTRY_HEADER_SIZE : pos + ENTRY_HEADER_SIZE + size])
        ok = entry_crc(offset, payload) == crc
        entries.append(DecodedEntry(offset, size, crc, payload, ok))
        if not ok:
            break
        pos += entry_length(size)
    return state, tail, seal_crc, entries


def rollback_slot(
    media: DurableMedia,
    slot_offset: int,
    slot_size: int,
    data_offset: int,
    region_size: int,
) -> int:
    """Apply one VALID slot's entries to the durable data area, newest first.

    Returns the number of entries applied.  Reverse order matters because
    repeated stores to one location each log the value they overwrote; only
    the oldest entry holds the value from the last completed sync.

    If the seal checksum does not match the durable entry bytes, the sealing
    fence never completed, so the data area is untouched and nothing needs
    rolling back.
    """
    slot_bytes = media.read(slot_offset, slot_size)
    state, tail, seal_crc, entries = decode_slot(slot_bytes, region_size)
    if state != STATE_VALID:
        return 0
    if zlib.crc32(slot_bytes[SLOT_HEADER_SIZE : SLOT_HEADER_SIZE + tail]) != seal_crc:
        return 0
    good = [e for e in entries if e.valid]
    for entry in reversed(good):
        media.write(data_offset + entry.offset, entry.payload)
        media.flush(data_offset + entry.offset, entry.size)
    media.fence()
    return len(good)
