"""Crash injection at every media-operation boundary, with exhaustive
crash-state enumeration at each one.

A trace is a JSON object:

    {
      "kind": "bytes" | "heap" | "kv",
      "region_size": 96, "line_size": 8, "slot_size": 1024,
      "buckets": 8,
      "ops": [ {"op": ...}, ... ]
    }

bytes ops:  {"op": "write",   "offset": o, "data": "hex"}
            {"op": "memset",  "offset": o, "value": v, "length": n}
            {"op": "memcpy",  "offset": o, "data": "hex"}
            {"op": "memmove", "dst": d, "src": s, "length": n}
            {"op": "sync"}
heap ops:   {"op": "alloc", "size": n}        (result is ref i, in order)
            {"op": "free", "ref": i} {"op": "root_set", "ref": i} {"op": "sync"}
kv ops:     {"op": "put", "key": k, "value": v} {"op": "get", "key": k}
            {"op": "delete", "key": k}          (k, v are strings; every
                                                 mutation syncs)

Region, heap and store setup runs fully fenced before boundary counting
starts, so a boundary index counts media operations performed by the trace
ops themselves.  Boundary b means: the first b media operations ran, then
the process died; every subset of the then flushed-but-unfenced lines is
checked as a possible durable image.

The verdict at a boundary: every enumerated crash state must recover to
the last completed sync's image, or, when the crash landed inside a sync,
to either that sync's pre or post image.  Anything else is a violation:
"stale_epoch" when the recovered image matches some older completed
epoch (a durability break), "atomicity" when it matches no epoch at all.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field

from . import engine, heap as heap_mod, interpose
from .errors import EnumerationBoundError, FamsyncError
from .kv import KvStore
from .media import MediaConfig, SimulatedMedia
from .region import PersistentRegion, RegionConfig
from .undolog import entry_length


class _Crash(Exception):
    """Internal signal: the injected crash point was reached."""


@dataclass
class Violation:
    boundary: int
    subset: frozenset
    kind: str  # stale_epoch | atomicity | recovery_error | heap_walk
    detail: str


@dataclass
class BoundaryVerdict:
    boundary: int
    states: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class SweepSummary:
    boundaries: int
    states: int
    violations: list[Violation] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


@dataclass
class RunOutcome:
    media: SimulatedMedia
    region: PersistentRegion
    epoch_images: list[bytes]
    inflight_post: bytes | None
    ops_executed: int

    @property
    def last_image(self) -> bytes:
        return self.epoch_images[-1]


_KIND_DEFAULTS = {
    # region_size, line_size, slot_size
    "bytes": (96, 8, 1024),
    "heap": (1024, 64, 2048),
    "kv": (4096, 64, 4096),
}


def load_trace(path: str) -> dict:
    """Read a trace file: a JSON array of {"op": ..., args} records.

    A record with op "config" sets geometry (kind, region_size, line_size,
    slot_size, max_threads, buckets) instead of being executed.  Without
    one, the kind is inferred from the op names and geometry takes the
    per-kind defaults.  A JSON object of the internal form ({"kind": ...,
    "ops": [...]}) is accepted too.
    """
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        trace = dict(raw)
        trace.setdefault("ops", [])
        return trace
    trace: dict = {}
    ops = []
    for record in raw:
        if record.get("op") == "config":
            trace.update({k: v for k, v in record.items() if k != "op"})
        else:
            ops.append(record)
    trace["ops"] = ops
    if "kind" not in trace:
        names = {op.get("op") for op in ops}
        if names & {"put", "get", "delete"}:
            trace["kind"] = "kv"
        elif names & {"alloc", "free", "root_set"}:
            trace["kind"] = "heap"
        else:
            trace["kind"] = "bytes"
    return trace


class TraceRunner:
    def __init__(self, trace: dict, *, fences: int = 3, sync_from_log: bool = False):
        self.trace = trace
        self.fences = fences
        self.sync_from_log = sync_from_log
        self.kind = trace.get("kind", "bytes")
        if self.kind not in _KIND_DEFAULTS:
            raise FamsyncError(f"unknown trace kind {self.kind!r}")
        region_size, line_size, slot_size = _KIND_DEFAULTS[self.kind]
        self.region_config = RegionConfig(
            region_size=trace.get("region_size", region_size),
            max_threads=trace.get("max_threads", 1),
            slot_size=trace.get("slot_size", slot_size),
        )
        self.media_config = MediaConfig(
            capacity_bytes=self.region_config.capacity_required,
            line_size=trace.get("line_size", line_size),
        )
        self.buckets = trace.get("buckets", 8)

    # -- execution ---------------------------------------------------------

    def _setup(self):
        media = SimulatedMedia(self.media_config)
        region = PersistentRegion.open(self.region_config, media)
        ctx = {"region": region}
        if self.kind == "heap":
            ctx["heap"] = heap_mod.Heap.attach(region)
            ctx["allocs"] = []
        elif self.kind == "kv":
            heap = heap_mod.Heap.attach(region)
            # Creation runs before the crash hook is armed; keep it fully
            # fenced even when the traced syncs use the two-fence mode.
            kv = KvStore.create(region, heap, self.buckets)
            kv.sync_each_op = False
            ctx["kv"] = kv
        return media, region, ctx

    def _sync(self, region) -> None:
        engine.fa_msync(region, fences=self.fences, sync_from_log=self.sync_from_log)

    def _apply(self, op: dict, ctx: dict) -> None:
        region = ctx["region"]
        base = region.config.working_base
        name = op["op"]
        if name == "write":
            interpose.tracked_write(region, base + op["offset"], bytes.fromhex(op["data"]))
        elif name == "memset":
            interpose.tracked_memset(region, base + op["offset"], op["value"], op["length"])
        elif name == "memcpy":
            interpose.tracked_memcpy(region, base + op["offset"], bytes.fromhex(op["data"]))
        elif name == "memmove":
            interpose.tracked_memmove(region, base + op["dst"], base + op["src"], op["length"])
        elif name == "alloc":
            ctx["allocs"].append(ctx["heap"].alloc(op["size"]))
        elif name == "free":
            ctx["heap"].free(ctx["allocs"][op["ref"]])
        elif name == "root_set":
            ctx["heap"].root_set(ctx["allocs"][op["ref"]])
        elif name == "put":
            ctx["kv"].put(op["key"].encode(), op["value"].encode())
        elif name == "get":
            ctx["kv"].get(op["key"].encode())
        elif name == "delete":
            ctx["kv"].delete(op["key"].encode())
        else:
            raise FamsyncError(f"unknown trace op {name!r}")

    def run(self, boundary: int | None = None) -> RunOutcome:
        """Execute the trace, dying at the given media-op boundary if set."""
        media, region, ctx = self._setup()
        epoch_images = [bytes(region.working)]
        executed = 0
        inflight: bytes | None = None

        def hook():
            nonlocal executed
            if boundary is not None and executed == boundary:
                raise _Crash()
            executed += 1

        media.op_hook = hook
        try:
            for op in self.trace["ops"]:
                syncs = op["op"] == "sync" or (
                    self.kind == "kv" and op["op"] in ("put", "delete")
                )
                if not syncs:
                    self._apply(op, ctx)
                    continue
                if op["op"] != "sync":
                    self._apply(op, ctx)  # the KV mutation itself, pre-sync
                # Mutation is quiesced here, so the working image is exactly
                # the post image this sync will commit.
                inflight = bytes(region.working)
                self._sync(region)
                epoch_images.append(inflight)
                inflight = None
        except _Crash:
            return RunOutcome(media, region, epoch_images, inflight, executed)
        finally:
            media.op_hook = None
        return RunOutcome(media, region, epoch_images, None, executed)

    def count_ops(self) -> int:
        return self.run(None).ops_executed

    def recover_image(self, image: bytes) -> bytes:
        """Open a region over a crashed durable image, return its data area."""
        media = SimulatedMedia.from_image(image, self.media_config)
        region = PersistentRegion.open(self.region_config, media)
        return bytes(region.working)


def inject_and_check(runner: TraceRunner, boundary: int) -> BoundaryVerdict:
    outcome = runner.run(boundary)
    allowed = {outcome.last_image}
    if outcome.inflight_post is not None:
        allowed.add(outcome.inflight_post)
    verdict = BoundaryVerdict(boundary, 0)
    for state in outcome.media.enumerate_crash_states():
        verdict.states += 1
        try:
            recovered = runner.recover_image(state.durable_image)
        except Exception as exc:  # recovery must never fail on a crash image
            verdict.violations.append(
                Violation(boundary, state.persisted_subset, "recovery_error", repr(exc))
            )
            continue
        if recovered not in allowed:
            kind = "stale_epoch" if recovered in outcome.epoch_images else "atomicity"
            verdict.violations.append(
                Violation(
                    boundary,
                    state.persisted_subset,
                    kind,
                    _diff_summary(recovered, outcome.last_image),
                )
            )
            continue
        if runner.kind == "heap":
            walk = heap_mod.walk_image(recovered)
            if not walk.ok:
                verdict.violations.append(
                    Violation(
                        boundary, state.persisted_subset, "heap_walk", "; ".join(walk.errors)
                    )
                )
    return verdict


def _diff_summary(got: bytes, want: bytes, limit: int = 4) -> str:
    diffs = [i for i, (a, b) in enumerate(zip(got, want)) if a != b]
    shown = ", ".join(f"@{i}: {got[i]:#04x} != {want[i]:#04x}" for i in diffs[:limit])
    more = f" (+{len(diffs) - limit} more)" if len(diffs) > limit else ""
    return f"{len(diffs)} differing bytes vs last epoch: {shown}{more}"


def sweep(trace: dict, *, fences: int = 3, sync_from_log: bool = False) -> SweepSummary:
    """inject_and_check at every boundary of the trace."""
    started = time.perf_counter()
    runner = TraceRunner(trace, fences=fences, sync_from_log=sync_from_log)
    total_ops = runner.count_ops()
    summary = SweepSummary(boundaries=total_ops + 1, states=0)
    for boundary in range(total_ops + 1):
        verdict = inject_and_check(runner, boundary)
        summary.states += verdict.states
        summary.violations.extend(verdict.violations)
    summary.elapsed_s = time.perf_counter() - started
    return summary


# -- randomized trace generation ---------------------------------------------

_OFFSET_POOL = 6
_ENTRY_LINE_BUDGET = 6  # per batch, on top of the 2-line slot header
_DATA_LINE_BUDGET = 6  # distinct data lines dirtied per batch


def random_trace(seed: int, *, max_ops: int = 20, max_syncs: int = 3) -> dict:
    """Random bytes-kind trace sized so enumeration stays fast and in bounds.

    Offsets come from a small per-trace pool so repeated stores to one
    location (the interesting rollback case) are common.  Two line budgets
    cap every sync batch: the sealed header-plus-entry lines (flushed
    together before the first fence) and the distinct data lines the copy
    phase flushes before the second.  Stores after the last sync are free,
    since their log appends are never flushed.
    """
    rng = random.Random(seed)
    region_size, line, _ = _KIND_DEFAULTS["bytes"]
    pool = [rng.randrange(0, region_size - 8) for _ in range(_OFFSET_POOL)]
    ops: list[dict] = []
    syncs = 0
    entry_lines = 0
    data_lines: set[int] = set()

    def store_op() -> tuple[dict, int, set[int]]:
        offset = rng.choice(pool)
        kind = rng.random()
        if kind < 0.55:
            size = rng.choice((1, 2, 4, 8))
            op = {"op": "write", "offset": offset, "data": rng.randbytes(size).hex()}
        elif kind < 0.75:
            size = rng.randint(1, 8)
            op = {"op": "memset", "offset": offset, "value": rng.randrange(256), "length": size}
        elif kind < 0.9:
            size = rng.randint(1, 8)
            op = {"op": "memcpy", "offset": offset, "data": rng.randbytes(size).hex()}
        else:
            size = rng.randint(1, 8)
            src = rng.choice(pool)
            op = {"op": "memmove", "dst": offset, "src": src, "length": size}
        lines = set(range(offset // line, (offset + size - 1) // line + 1))
        return op, entry_length(size) // line, lines

    target_ops = rng.randint(6, max_ops)
    while len(ops) < target_ops:
        op, cost, lines = store_op()
        fits = (
            entry_lines + cost <= _ENTRY_LINE_BUDGET
            and len(data_lines | lines) <= _DATA_LINE_BUDGET
        )
        batch_open = entry_lines > 0
        if syncs < max_syncs and batch_open and (not fits or rng.random() < 0.25):
            ops.append({"op": "sync"})
            syncs += 1
            entry_lines = 0
            data_lines = set()
        elif fits or syncs >= max_syncs:
            ops.append(op)
            entry_lines += cost
            data_lines |= lines
        else:
            ops.append({"op": "sync"})
            syncs += 1
            entry_lines = 0
            data_lines = set()
    return {"kind": "bytes", "region_size": region_size, "line_size": line, "ops": ops}


def sweep_random_traces(
    seed: int, count: int, *, fences: int = 3, sync_from_log: bool = False
) -> SweepSummary:
    total = SweepSummary(boundaries=0, states=0)
    started = time.perf_counter()
    for index in range(count):
        trace = random_trace(seed + index)
        try:
            result = sweep(trace, fences=fences, sync_from_log=sync_from_log)
        except EnumerationBoundError as exc:
            raise FamsyncError(
                f"trace seed {seed + index} exceeded the enumeration bound; "
                "the generator's batch budgets are wrong"
            ) from exc
        total.boundaries += result.boundaries
        total.states += result.states
        total.violations.extend(result.violations)
    total.elapsed_s = time.perf_counter() - started
    return total
