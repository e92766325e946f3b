"""Command line front end.

    famsync dump --media out.img [--trace t.json]     emit a durable image
    famsync inspect file [--logs] [--heap]            print on-media layout
    famsync recover file                              roll back + invalidate
    famsync sync-stats --trace t.json                 per-sync accounting CSV
    famsync bench --mix A --mode famsync ...          workload benchmark
    famsync crashtest --sweep ...                     crash-injection sweeps
    famsync kv-run --path f ...                       kill-test child process
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import bench, harness, workload
from .errors import FamsyncError
from .heap import Heap, walk_image
from .kv import KvStore
from .media import MediaConfig, open_media
from .region import (
    FILE_HEADER_SIZE,
    PersistentRegion,
    RegionConfig,
    read_file_header,
    recover_media,
)
from .undolog import STATE_VALID, decode_slot


def _load_or_default(path: str | None) -> dict:
    if path is None:
        return {"kind": "bytes", "ops": []}
    return harness.load_trace(path)


def cmd_dump(args) -> int:
    trace = _load_or_default(args.trace)
    runner = harness.TraceRunner(trace, fences=args.fences)
    outcome = runner.run(None)
    image = outcome.media.durable_snapshot()
    with open(args.media, "wb") as fh:
        fh.write(image)
    cfg = runner.region_config
    print(
        f"wrote {len(image)} bytes to {args.media} "
        f"(region_size={cfg.region_size} data_offset={cfg.data_offset} "
        f"slots={cfg.max_threads}x{cfg.slot_size}, {outcome.ops_executed} media ops)"
    )
    return 0


def cmd_inspect(args) -> int:
    with open(args.file, "rb") as fh:
        image = fh.read()
    header = read_file_header(image[:FILE_HEADER_SIZE])
    print("magic            FAMSYNC1")
    print(f"version          {header.version}")
    print(f"region_size      {header.region_size}")
    print(f"max_threads      {header.max_threads}")
    print(f"slot_size        {header.slot_size}")
    print(f"data_offset      {header.data_offset}")
    if args.logs:
        for index in range(header.max_threads):
            start = header.slot_offset(index)
            state, tail, seal, entries = decode_slot(
                image[start : start + header.slot_size], header.region_size
            )
            name = "VALID" if state == STATE_VALID else f"INVALID({state})" if state else "INVALID"
            print(f"slot {index}: {name} tail={tail} seal={seal:#010x}")
            for pos, entry in enumerate(entries):
                flag = "ok" if entry.valid else "BAD"
                print(
                    f"  entry {pos}: offset={entry.offset} size={entry.size} "
                    f"crc={entry.crc:#010x} {flag}"
                )
    if args.heap:
        data = image[header.data_offset : header.data_offset + header.region_size]
        walk = walk_image(data)
        if not walk.initialized:
            print("heap: not initialized")
        else:
            state = "consistent" if walk.ok else "; ".join(walk.errors)
            print(
                f"heap: {state} root={walk.root_offset} high_water={walk.high_water} "
                f"live={len(walk.live_blocks)} free={len(walk.free_blocks)}"
            )
    return 0


def _media_over_file(path: str):
    size = os.path.getsize(path)
    line = 64 if size % 64 == 0 else 8
    if size % line != 0:
        raise FamsyncError(f"file size {size} is not a multiple of any line size")
    return open_media(MediaConfig(capacity_bytes=size, line_size=line, mode="real_file", path=path))


def cmd_recover(args) -> int:
    media = _media_over_file(args.file)
    try:
        count = recover_media(media)
    finally:
        media.close()
    print(f"recovered {args.file}: {count} log slot(s) rolled back")
    return 0


def cmd_sync_stats(args) -> int:
    trace = harness.load_trace(args.trace)
    runner = harness.TraceRunner(trace, fences=args.fences)
    outcome = runner.run(None)
    writer = csv.writer(sys.stdout)
    writer.writerow(["epoch", "entries", "logged_bytes", "copied_bytes", "fences"])
    for report in outcome.region.sync_history:
        writer.writerow(
            [
                report.epoch,
                report.entries_sealed,
                report.logged_bytes,
                report.bytes_copied,
                report.fences_issued,
            ]
        )
    return 0


def cmd_bench(args) -> int:
    spec = workload.WorkloadSpec(
        mix=args.mix,
        record_count=args.records,
        op_count=args.ops,
        key_dist=args.key_dist,
        value_size=args.value_size,
        seed=args.seed,
    )
    report = bench.run_workload(
        spec,
        args.mode,
        threads=args.threads,
        region_size=args.region_size,
        line_size=args.line_size,
        slot_size=args.slot_size,
        media_mode="real_file" if args.path else "simulated",
        path=args.path,
        latency_ns_per_flush=args.latency_ns,
    )
    print(
        f"{report.mode} mix {report.mix}: {report.ops} ops in {report.elapsed_s:.3f}s "
        f"({report.ops_per_sec:.0f} ops/s), syncs={report.syncs} fences={report.fences} "
        f"durability_points={report.durability_points} logged={report.logged_bytes} "
        f"copied={report.copied_bytes} wal={report.wal_bytes}"
    )
    if args.csv:
        bench.write_csv(args.csv, [report])
        print(f"csv written to {args.csv}")
    return 0


def cmd_crashtest(args) -> int:
    if args.trace:
        summary = harness.sweep(
            harness.load_trace(args.trace),
            fences=args.fences,
            sync_from_log=args.sync_from_log,
        )
        traces = 1
    else:
        summary = harness.sweep_random_traces(
            args.seed,
            args.random_traces,
            fences=args.fences,
            sync_from_log=args.sync_from_log,
        )
        traces = args.random_traces
    by_kind: dict[str, int] = {}
    for violation in summary.violations:
        by_kind[violation.kind] = by_kind.get(violation.kind, 0) + 1
    print(
        f"{traces} trace(s), {summary.boundaries} boundaries, "
        f"{summary.states} crash states, {len(summary.violations)} violation(s) "
        f"in {summary.elapsed_s:.1f}s [fences={args.fences}]"
    )
    for kind, count in sorted(by_kind.items()):
        print(f"  {kind}: {count}")
    for violation in summary.violations[:5]:
        print(
            f"  e.g. boundary {violation.boundary} subset {sorted(violation.subset)}: "
            f"{violation.kind}: {violation.detail}"
        )
    benign = args.fences == 2 and set(by_kind) <= {"stale_epoch"}
    return 0 if summary.ok or benign else 1


def cmd_kv_run(args) -> int:
    region_config = RegionConfig(region_size=args.region_size)
    media = open_media(
        MediaConfig(
            capacity_bytes=region_config.capacity_required,
            line_size=64,
            mode="real_file",
            path=args.path,
        )
    )
    region = PersistentRegion.open(region_config, media)
    heap = Heap.attach(region)
    if heap.root_get():
        kv = KvStore.attach(region, heap)
    else:
        kv = KvStore.create(region, heap, args.buckets)
    kv.sync_each_op = False
    for index in range(args.records):
        kv.put(workload.key_for(index), bytes(args.value_size))
        if index % 512 == 511:
            kv.syncer()
    kv.syncer()
    kv.sync_each_op = True
    print("READY", flush=True)
    for index, op in enumerate(workload.kill_test_ops(args.seed, args.ops, args.records)):
        if op.kind == "read":
            kv.get(op.key)
        elif op.kind == "delete":
            kv.delete(op.key)
        else:
            kv.put(op.key, op.value)
        print(f"ACK {index}", flush=True)
    print("DONE", flush=True)
    region.close()
    return 0


def _add_fences(parser, default=3) -> None:
    parser.add_argument("--fences", type=int, choices=(2, 3), default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="famsync")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dump", help="run a trace on simulated media, save the durable image")
    p.add_argument("--media", required=True, help="output image path")
    p.add_argument("--trace", help="trace JSON; empty region when omitted")
    _add_fences(p)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("inspect", help="print a backing file's header and structures")
    p.add_argument("file")
    p.add_argument("--logs", action="store_true", help="decode the log slots")
    p.add_argument("--heap", action="store_true", help="walk the heap in the data area")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("recover", help="roll back any valid log slots in a backing file")
    p.add_argument("file")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("sync-stats", help="run a trace and print per-sync accounting as CSV")
    p.add_argument("--trace", required=True)
    _add_fences(p)
    p.set_defaults(func=cmd_sync_stats)

    p = sub.add_parser("bench", help="run a workload mix against one mode")
    p.add_argument("--mix", choices=workload.MIXES, default="A")
    p.add_argument("--mode", choices=bench.MODES, default="famsync")
    p.add_argument("--records", type=int, default=10_000)
    p.add_argument("--ops", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--csv", help="write the result row to this CSV file")
    p.add_argument("--key-dist", choices=("zipfian", "uniform"), default="zipfian")
    p.add_argument("--value-size", type=int, default=8)
    p.add_argument("--region-size", type=int, default=64 << 20)
    p.add_argument("--line-size", type=int, default=64)
    p.add_argument("--slot-size", type=int, default=1 << 20)
    p.add_argument("--latency-ns", type=int, default=0, help="simulated latency per flush")
    p.add_argument("--path", help="back the region with a real file at this path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("crashtest", help="crash-inject a trace (or random traces) at every boundary")
    p.add_argument("--trace", help="trace JSON file; random traces when omitted")
    p.add_argument("--sweep", action="store_true", help="sweep all boundaries (the default and only strategy)")
    _add_fences(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-traces", type=int, default=1000)
    p.add_argument("--sync-from-log", action="store_true", help="derive sync ranges from the log")
    p.set_defaults(func=cmd_crashtest)

    p = sub.add_parser("kv-run", help="kill-test child: preload, then ack each synced op")
    p.add_argument("--path", required=True)
    p.add_argument("--records", type=int, default=512)
    p.add_argument("--ops", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--buckets", type=int, default=256)
    p.add_argument("--value-size", type=int, default=8)
    p.add_argument("--region-size", type=int, default=1 << 20)
    p.set_defaults(func=cmd_kv_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FamsyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
