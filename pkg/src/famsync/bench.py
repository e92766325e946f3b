"""Benchmark driver: runs a workload mix against one of three modes.

    famsync   undo logging plus line-granularity sync (the library itself)
    page4k    identical, but copied ranges widen to 4096-byte pages,
              modeling page-granularity dirty tracking
    wal       redo records with two durability points per update

Reported byte and fence counts come from the instrumented media, so the
modes are compared on identical op streams and identical store layouts.
"""

from __future__ import annotations

import csv
import threading
import time
import zlib
from dataclasses import dataclass

from . import engine
from .errors import ConfigError, LogFullError
from .heap import Heap
from .kv import KvStore
from .media import MediaConfig, open_media
from .region import PersistentRegion, RegionConfig
from .wal import WalArea
from .workload import Op, WorkloadSpec, generate_ops, key_for

MODES = ("famsync", "page4k", "wal")
CSV_COLUMNS = (
    "mode",
    "mix",
    "ops_per_sec",
    "syncs",
    "fences",
    "logged_bytes",
    "copied_bytes",
    "wal_bytes",
)
_PRELOAD_BATCH = 512


@dataclass
class BenchReport:
    mode: str
    mix: str
    ops: int
    elapsed_s: float
    ops_per_sec: float
    syncs: int
    fences: int
    durability_points: int
    logged_bytes: int
    copied_bytes: int
    wal_bytes: int
    latency_ns: int = 0

    def csv_row(self) -> dict:
        return {
            "mode": self.mode,
            "mix": self.mix,
            "ops_per_sec": f"{self.ops_per_sec:.1f}",
            "syncs": self.syncs,
            "fences": self.fences,
            "logged_bytes": self.logged_bytes,
            "copied_bytes": self.copied_bytes,
            "wal_bytes": self.wal_bytes,
        }


def write_csv(path: str, reports: list[BenchReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.csv_row())


class _Harness:
    """One region + store wired for a mode."""

    def __init__(
        self,
        mode: str,
        *,
        region_size: int,
        line_size: int,
        max_threads: int,
        slot_size: int,
        bucket_count: int,
        media_mode: str = "simulated",
        path: str | None = None,
        latency_ns_per_flush: int = 0,
    ):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        self.mode = mode
        region_config = RegionConfig(
            region_size=region_size, max_threads=max_threads, slot_size=slot_size
        )
        media_config = MediaConfig(
            capacity_bytes=region_config.capacity_required,
            line_size=line_size,
            mode=media_mode,
            path=path,
            latency_ns_per_flush=latency_ns_per_flush,
        )
        if latency_ns_per_flush > 0 and media_mode == "simulated":
            media_config.mode = "simulated_with_latency"
        self.media = open_media(media_config)
        self.region = PersistentRegion.open(region_config, self.media)
        self.wal = None
        if mode == "famsync":
            self.syncer = lambda: engine.fa_msync(self.region)
        elif mode == "page4k":
            self.syncer = lambda: engine.fa_msync(self.region, copy_align=4096)
        else:
            self.wal = WalArea(self.region)
            self.syncer = self.wal.commit
        self.heap = Heap.attach(self.region, syncer=self.syncer)
        if self.heap.root_get() != 0:
            self.kv = KvStore.attach(self.region, self.heap, self.syncer)
        else:
            self.kv = KvStore.create(self.region, self.heap, bucket_count, self.syncer)

    def preload(self, spec: WorkloadSpec) -> None:
        self.kv.sync_each_op = False
        sync = self.syncer
        for index in range(spec.record_count):
            op = Op("insert", key_for(index), bytes(spec.value_size))
            for attempt in (0, 1):
                try:
                    self.kv.put(op.key, op.value)
                    break
                except LogFullError:
                    if attempt:
                        raise
                    # Commit what fit, then redo the whole op; replayed
                    # writes are idempotent, so the net state is the same.
                    sync()
            if index % _PRELOAD_BATCH == _PRELOAD_BATCH - 1:
                sync()
        sync()
        self.kv.sync_each_op = True

    def apply(self, op: Op) -> None:
        kv = self.kv
        if op.kind == "read":
            kv.get(op.key)
        elif op.kind in ("update", "insert"):
            kv.put(op.key, op.value)
        elif op.kind == "delete":
            kv.delete(op.key)
        elif op.kind == "rmw":
            kv.get(op.key)
            kv.put(op.key, op.value)
        elif op.kind == "scan":
            kv.scan(op.key, op.scan_limit)


def run_workload(
    spec: WorkloadSpec,
    mode: str,
    *,
    threads: int = 1,
    region_size: int = 64 << 20,
    line_size: int = 64,
    slot_size: int = 1 << 20,
    bucket_count: int | None = None,
    media_mode: str = "simulated",
    path: str | None = None,
    latency_ns_per_flush: int = 0,
) -> BenchReport:
    spec.validate()
    if threads > 1 and spec.mix == "D":
        raise ConfigError("mix D mutates shared insert state; run it single-threaded")
    if bucket_count is None:
        bucket_count = 1 << max(4, (spec.record_count // 8).bit_length())
    harness = _Harness(
        mode,
        region_size=region_size,
        line_size=line_size,
        max_threads=max(threads, 1) + 1,
        slot_size=slot_size,
        bucket_count=bucket_count,
        media_mode=media_mode,
        path=path,
        latency_ns_per_flush=latency_ns_per_flush,
    )
    harness.preload(spec)

    counters = harness.media.counters
    fences_before = counters.fences
    latency_before = counters.latency_ns
    history_before = len(harness.region.sync_history)
    wal = harness.wal
    wal_commits_before = wal.commits if wal else 0
    wal_bytes_before = wal.bytes_written if wal else 0
    wal_points_before = wal.durability_points if wal else 0
    wal_data_before = wal.data_bytes if wal else 0

    ops = list(generate_ops(spec))
    started = time.perf_counter()
    if threads <= 1:
        for op in ops:
            harness.apply(op)
    else:
        # Keys are partitioned by a stable hash so no two workers touch one
        # record and reruns shard identically.
        shards = [[] for _ in range(threads)]
        for op in ops:
            shards[zlib.crc32(op.key) % threads].append(op)
        workers = [
            threading.Thread(target=lambda shard=shard: [harness.apply(op) for op in shard])
            for shard in shards
        ]
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()
    elapsed = time.perf_counter() - started

    new_reports = harness.region.sync_history[history_before:]
    syncs = (wal.commits - wal_commits_before) if wal else len(new_reports)
    report = BenchReport(
        mode=mode,
        mix=spec.mix,
        ops=len(ops),
        elapsed_s=elapsed,
        ops_per_sec=len(ops) / elapsed if elapsed > 0 else 0.0,
        syncs=syncs,
        fences=counters.fences - fences_before,
        durability_points=(wal.durability_points - wal_points_before) if wal else syncs,
        logged_bytes=sum(r.logged_bytes for r in new_reports),
        copied_bytes=(wal.data_bytes - wal_data_before)
        if wal
        else sum(r.bytes_copied for r in new_reports),
        wal_bytes=(wal.bytes_written - wal_bytes_before) if wal else 0,
        latency_ns=counters.latency_ns - latency_before,
    )
    harness.region.close()
    return report
