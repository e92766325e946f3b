"""Hash-table KV store over the persistent heap: each bucket is a vector.

The directory is a fixed array of bucket offsets; a bucket is a growable
vector of record offsets; a record is (key length, value length, key,
value).  Bucket choice hashes the key with CRC32 so placement survives
process restarts.

Every mutating operation runs inside one shared-lock section, so a sync
from another thread never captures half an operation, and is followed by
one fa_msync when sync_each_op is set (transaction per operation).
"""

from __future__ import annotations

import struct
import zlib

from . import engine
from .errors import ConfigError, CorruptionError
from .heap import Heap
from .interpose import _write_raw
from .region import PersistentRegion

KV_MAGIC = int.from_bytes(b"FAMKVST1", "little")

_HDR = struct.Struct("<QQQ")  # magic, bucket_count, directory offset
_VEC = struct.Struct("<II")  # count, capacity
_REC = struct.Struct("<II")  # key length, value length
_U64 = struct.Struct("<Q")
_INITIAL_CAPACITY = 4


class KvStore:
    def __init__(self, region: PersistentRegion, heap: Heap, header_off: int, syncer=None):
        self.region = region
        self.heap = heap
        self.header_off = header_off
        magic, self.bucket_count, self.dir_off = _HDR.unpack_from(
            region.working, header_off
        )
        if magic != KV_MAGIC:
            raise CorruptionError("root object is not a KV store header")
        self.syncer = syncer or (lambda: engine.fa_msync(region))
        self.sync_each_op = True

    # -- lifecycle -------------------------------------------------------

    @classmethod
    def create(cls, region: PersistentRegion, heap: Heap, bucket_count: int = 1024, syncer=None):
        if bucket_count < 1 or bucket_count & (bucket_count - 1):
            raise ConfigError("bucket_count must be a power of two")
        with region.lock.shared():
            dir_off = heap.alloc(bucket_count * 8)
            _write_raw(region, dir_off, bytes(bucket_count * 8))
            header_off = heap.alloc(_HDR.size)
            _write_raw(region, header_off, _HDR.pack(KV_MAGIC, bucket_count, dir_off))
            heap.root_set(header_off)
        store = cls(region, heap, header_off, syncer)
        store.syncer()
        return store

    @classmethod
    def attach(cls, region: PersistentRegion, heap: Heap, syncer=None):
        root = heap.root_get()
        if root == 0:
            raise CorruptionError("heap has no root object to attach to")
        return cls(region, heap, root, syncer)

    # -- internals ---------------------------------------------------------

    def _u64(self, off: int) -> int:
        return _U64.unpack_from(self.region.working, off)[0]

    def _bucket_vec(self, bucket: int) -> int:
        return self._u64(self.dir_off + bucket * 8)

    def _bucket_of(self, key: bytes) -> int:
        return zlib.crc32(key) & (self.bucket_count - 1)

    def _record(self, rec_off: int) -> tuple[bytes, bytes]:
        klen, vlen = _REC.unpack_from(self.region.working, rec_off)
        base = rec_off + _REC.size
        view = self.region.working
        return bytes(view[base : base + klen]), bytes(view[base + klen : base + klen + vlen])

    def _bucket_items(self, bucket: int) -> list[tuple[bytes, bytes, int, int]]:
        vec = self._bucket_vec(bucket)
        if vec == 0:
            return []
        count, _ = _VEC.unpack_from(self.region.working, vec)
        items = []
        for idx in range(count):
            rec = self._u64(vec + _VEC.size + idx * 8)
            key, value = self._record(rec)
            items.append((key, value, idx, rec))
        return items

    def _find(self, key: bytes):
        bucket = self._bucket_of(key)
        vec = self._bucket_vec(bucket)
        for found_key, value, idx, rec in self._bucket_items(bucket):
            if found_key == key:
                return bucket, vec, idx, rec, value
        return bucket, vec, None, None, None

    def _write_record(self, key: bytes, value: bytes) -> int:
        rec = self.heap.alloc(_REC.size + len(key) + len(value))
        _write_raw(self.region, rec, _REC.pack(len(key), len(value)) + key + value)
        return rec

    def _append_to_bucket(self, bucket: int, vec: int, rec: int) -> None:
        if vec == 0:
            vec = self.heap.alloc(_VEC.size + _INITIAL_CAPACITY * 8)
            _write_raw(self.region, vec, _VEC.pack(0, _INITIAL_CAPACITY))
            _write_raw(self.region, self.dir_off + bucket * 8, _U64.pack(vec))
        count, capacity = _VEC.unpack_from(self.region.working, vec)
        if count == capacity:
            capacity *= 2
            grown = self.heap.alloc(_VEC.size + capacity * 8)
            slots = bytes(
                self.region.working[vec + _VEC.size : vec + _VEC.size + count * 8]
            )
            _write_raw(self.region, grown, _VEC.pack(count, capacity) + slots)
            _write_raw(self.region, self.dir_off + bucket * 8, _U64.pack(grown))
            self.heap.free(vec)
            vec = grown
        _write_raw(self.region, vec + _VEC.size + count * 8, _U64.pack(rec))
        _write_raw(self.region, vec, _VEC.pack(count + 1, capacity))

    # -- operations ----------------------------------------------------------

    def put(self, key: bytes, value: bytes) -> None:
        with self.region.lock.shared():
            bucket, vec, idx, rec, old_value = self._find(key)
            if idx is not None and len(old_value) == len(value):
                _write_raw(self.region, rec + _REC.size + len(key), value)
            elif idx is not None:
                new_rec = self._write_record(key, value)
                _write_raw(self.region, vec + _VEC.size + idx * 8, _U64.pack(new_rec))
                self.heap.free(rec)
            else:
                new_rec = self._write_record(key, value)
                self._append_to_bucket(bucket, vec, new_rec)
        if self.sync_each_op:
            self.syncer()

    def get(self, key: bytes):
        _, _, idx, _, value = self._find(key)
        return value if idx is not None else None

    def delete(self, key: bytes) -> bool:
        with self.region.lock.shared():
            bucket, vec, idx, rec, _ = self._find(key)
            if idx is None:
                return False
            count, capacity = _VEC.unpack_from(self.region.working, vec)
            last = count - 1
            if idx != last:
                moved = self._u64(vec + _VEC.size + last * 8)
                _write_raw(self.region, vec + _VEC.size + idx * 8, _U64.pack(moved))
            _write_raw(self.region, vec, _VEC.pack(last, capacity))
            self.heap.free(rec)
        if self.sync_each_op:
            self.syncer()
        return True

    def scan(self, start_key: bytes, limit: int) -> list[tuple[bytes, bytes]]:
        """Up to limit records with key >= start_key, in key order, from the
        start key's bucket chain."""
        bucket = self._bucket_of(start_key)
        items = sorted(
            (key, value) for key, value, _, _ in self._bucket_items(bucket)
        )
        return [(k, v) for k, v in items if k >= start_key][:limit]

    def items(self) -> dict[bytes, bytes]:
        out = {}
        for bucket in range(self.bucket_count):
            for key, value, _, _ in self._bucket_items(bucket):
                out[key] = value
        return out
