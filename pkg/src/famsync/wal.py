"""Write-ahead-log baseline: two durability points per atomic update.

Instead of undo logging, dirty ranges are serialized as redo records into
a WAL area at the head of the file, made durable (point one), applied in
place to the data area, made durable again (point two), then the WAL head
is reset.  The reset is left unfenced deliberately: replaying a complete
WAL is idempotent, so the next commit's first fence may retire it.

The WAL area reuses the byte range the undo slots would occupy; a region
in WAL mode runs with undo logging disabled and must be recovered with
wal_recover, not the undo path.
"""

from __future__ import annotations

import struct
import zlib

from . import tracker
from .errors import RangeError
from .media import DurableMedia
from .region import FILE_HEADER_SIZE, PersistentRegion, read_file_header

WAL_MAGIC = int.from_bytes(b"FAMWAL01", "little")
WAL_HEADER = struct.Struct("<QIIQI4x")  # magic, state, record count, byte length, crc
WAL_STATE_EMPTY = 0
WAL_STATE_SEALED = 1
REC_HEADER = struct.Struct("<QI4x")  # data offset, length


def _pad8(n: int) -> int:
    return (n + 7) & ~7


class WalArea:
    def __init__(self, region: PersistentRegion):
        self.region = region
        self.area_offset = FILE_HEADER_SIZE
        self.records_offset = self.area_offset + WAL_HEADER.size
        self.capacity = region.config.data_offset - self.records_offset
        self.commits = 0
        self.durability_points = 0
        self.bytes_written = 0
        self.data_bytes = 0
        region.undo_logging = False

    def commit(self) -> None:
        """One atomic update: seal redo records, fence, apply, fence, reset."""
        region = self.region
        media = region.media
        with region.lock.exclusive():
            ranges = tracker.coalesce(region.dirty)
            blob = bytearray()
            for offset, size in ranges:
                data = bytes(region.working[offset : offset + size])
                blob += REC_HEADER.pack(offset, size) + data + b"\0" * (_pad8(size) - size)
            if len(blob) > self.capacity:
                raise RangeError("WAL area too small for this commit")
            if blob:
                media.write(self.records_offset, bytes(blob))
            media.write(
                self.area_offset,
                WAL_HEADER.pack(
                    WAL_MAGIC, WAL_STATE_SEALED, len(ranges), len(blob), zlib.crc32(bytes(blob))
                ),
            )
            media.flush(self.area_offset, WAL_HEADER.size + len(blob))
            media.fence()

            for offset, size in ranges:
                media.write(
                    region.config.data_offset + offset,
                    bytes(region.working[offset : offset + size]),
                )
                media.flush(region.config.data_offset + offset, size)
                self.data_bytes += size
            media.fence()

            media.write(
                self.area_offset,
                WAL_HEADER.pack(WAL_MAGIC, WAL_STATE_EMPTY, 0, 0, 0),
            )
            media.flush(self.area_offset, WAL_HEADER.size)

            tracker.clear_all(region.dirty)
            region.sync_epoch += 1
            self.commits += 1
            self.durability_points += 2
            self.bytes_written += len(blob)


def wal_recover(media: DurableMedia) -> int:
    """Redo a sealed WAL if present; returns the number of records applied."""
    header = read_file_header(media.read(0, FILE_HEADER_SIZE))
    area_offset = FILE_HEADER_SIZE
    records_offset = area_offset + WAL_HEADER.size
    magic, state, count, length, crc = WAL_HEADER.unpack(
        media.read(area_offset, WAL_HEADER.size)
    )
    applied = 0
    if magic == WAL_MAGIC and state == WAL_STATE_SEALED:
        blob = media.read(records_offset, length)
        if zlib.crc32(blob) == crc:
            pos = 0
            for _ in range(count):
                offset, size = REC_HEADER.unpack_from(blob, pos)
                pos += REC_HEADER.size
                media.write(header.data_offset + offset, blob[pos : pos + size])
                media.flush(header.data_offset + offset, size)
                pos += _pad8(size)
                applied += 1
            media.fence()
    media.write(area_offset, WAL_HEADER.pack(WAL_MAGIC, WAL_STATE_EMPTY, 0, 0, 0))
    media.flush(area_offset, WAL_HEADER.size)
    media.fence()
    return applied
