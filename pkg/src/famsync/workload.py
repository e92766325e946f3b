"""YCSB-style operation mixes A through G.

Mix table:

    A  read 50% / update 50%
    B  read 95% / update 5%
    C  read 100%
    D  insert and read latest, delete old
    E  read-modify-write
    F  short range scans
    G  update 100%

Mix D is realized as a composite op: insert a fresh key, read uniformly
among the latest 100 inserts, delete the oldest still-live key.  The E and
F meanings follow the table above verbatim even though they swap the
usual YCSB labels.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator, Optional

from .errors import ConfigError

MIX_RATIOS = {
    "A": {"read": 0.5, "update": 0.5},
    "B": {"read": 0.95, "update": 0.05},
    "C": {"read": 1.0},
    "G": {"update": 1.0},
}
MIXES = ("A", "B", "C", "D", "E", "F", "G")
LATEST_WINDOW = 100
MAX_SCAN = 16


def key_for(index: int) -> bytes:
    return b"user%012d" % index


@dataclass
class WorkloadSpec:
    mix: str = "A"
    record_count: int = 100_000
    op_count: int = 100_000
    key_dist: str = "zipfian"
    value_size: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.mix not in MIXES:
            raise ConfigError(f"mix must be one of {MIXES}, got {self.mix!r}")
        if self.key_dist not in ("zipfian", "uniform"):
            raise ConfigError(f"unknown key distribution {self.key_dist!r}")
        if self.record_count < 1 or self.op_count < 0 or self.value_size < 1:
            raise ConfigError("record_count, op_count and value_size must be positive")


@dataclass
class Op:
    kind: str  # read | update | insert | delete | rmw | scan
    key: bytes
    value: Optional[bytes] = None
    scan_limit: int = 0


class ZipfianGenerator:
    """Draws ranks in [0, n) with P(rank) proportional to 1/(rank+1)^theta."""

    def __init__(self, n: int, theta: float = 0.99, rng: Optional[random.Random] = None):
        self.n = n
        self.theta = theta
        self.rng = rng or random.Random()
        self.zetan = sum(1.0 / (i + 1) ** theta for i in range(n))
        zeta2 = 1.0 + 0.5**theta
        self.alpha = 1.0 / (1.0 - theta)
        self.eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - zeta2 / self.zetan)

    def next(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5**self.theta:
            return 1
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1.0) ** self.alpha))


def generate_ops(spec: WorkloadSpec) -> Iterator[Op]:
    """Deterministic op stream for a preloaded store of record_count keys."""
    spec.validate()
    rng = random.Random(spec.seed)
    if spec.key_dist == "zipfian" and spec.mix not in ("D",):
        chooser = ZipfianGenerator(spec.record_count, rng=rng)
        pick = chooser.next
    else:
        pick = lambda: rng.randrange(spec.record_count)

    def value() -> bytes:
        return rng.randbytes(spec.value_size)

    if spec.mix in MIX_RATIOS:
        ratios = MIX_RATIOS[spec.mix]
        read_p = ratios.get("read", 0.0)
        for _ in range(spec.op_count):
            key = key_for(pick())
            if rng.random() < read_p:
                yield Op("read", key)
            else:
                yield Op("update", key, value())
    elif spec.mix == "D":
        next_key = spec.record_count
        oldest_live = 0
        for _ in range(spec.op_count):
            yield Op("insert", key_for(next_key), value())
            next_key += 1
            low = max(0, next_key - LATEST_WINDOW)
            yield Op("read", key_for(rng.randrange(low, next_key)))
            if oldest_live < low:
                yield Op("delete", key_for(oldest_live))
                oldest_live += 1
    elif spec.mix == "E":
        for _ in range(spec.op_count):
            yield Op("rmw", key_for(pick()), value())
    elif spec.mix == "F":
        for _ in range(spec.op_count):
            yield Op("scan", key_for(pick()), scan_limit=rng.randint(1, MAX_SCAN))


def kill_test_ops(seed: int, count: int, keyspace: int) -> Iterator[Op]:
    """Mixed put/update/get/delete stream for the process-kill test."""
    rng = random.Random(seed)
    for _ in range(count):
        roll = rng.random()
        key = key_for(rng.randrange(keyspace))
        if roll < 0.45:
            yield Op("update", key, rng.randbytes(8))
        elif roll < 0.65:
            yield Op("read", key)
        else:
            yield Op("delete", key)


def apply_to_oracle(oracle: dict, op: Op) -> None:
    """Replay one op against a plain dict with the same semantics."""
    if op.kind in ("update", "insert"):
        oracle[op.key] = op.value
    elif op.kind == "rmw":
        if op.key in oracle:
            oracle[op.key] = op.value
    elif op.kind == "delete":
        oracle.pop(op.key, None)
