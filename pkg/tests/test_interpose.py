"""Store interposition: undo append plus dirty record, before the mutation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from famsync.errors import LogFullError, RangeError
from famsync.interpose import (
    on_store,
    tracked_memcpy,
    tracked_memmove,
    tracked_memset,
    tracked_write,
)
from famsync.media import MediaConfig, SimulatedMedia
from famsync.region import PersistentRegion, RegionConfig


def make_region(region_size=96, slot_size=1024, **kw):
    config = RegionConfig(region_size, max_threads=2, slot_size=slot_size, **kw)
    media = SimulatedMedia(MediaConfig(capacity_bytes=config.capacity_required, line_size=8))
    return PersistentRegion.open(config, media)


class TestOnStore:
    def test_outside_working_range_is_noop(self):
        region = make_region()
        on_store(region, 0x1234, 8)
        on_store(region, region.config.backing_base, 8)
        assert region.logs[0].tail == 0
        assert region.dirty[0].records == []

    def test_bad_scalar_size(self):
        region = make_region()
        with pytest.raises(RangeError):
            on_store(region, region.from_offset(0), 3)

    def test_logs_preimage_and_dirty(self):
        region = make_region()
        region.working[8:16] = b"ORIGINAL"
        on_store(region, region.from_offset(8), 8)
        log = region.logs[0]
        assert log.appended == 1
        assert log.logged_bytes == 8
        # The undo payload is the value before the store.
        assert bytes(log._mirror[16:24]) == b"ORIGINAL"
        assert [(r.offset, r.size) for r in region.dirty[0].records] == [(8, 8)]

    def test_store_at_region_edge(self):
        region = make_region()
        on_store(region, region.from_offset(88), 8)
        with pytest.raises(RangeError):
            on_store(region, region.from_offset(89), 8)


class TestTrackedOps:
    def test_write_mutates_working_not_durable(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"hello")
        assert region.working[:5] == b"hello"
        durable = region.media.durable_snapshot()
        assert durable[region.config.data_offset : region.config.data_offset + 5] == bytes(5)

    def test_write_outside_range_raises(self):
        region = make_region()
        with pytest.raises(RangeError):
            tracked_write(region, region.from_offset(90), b"toolong")
        with pytest.raises(RangeError):
            tracked_write(region, 123, b"x")

    def test_empty_write_is_free(self):
        region = make_region()
        before = region.media.counters.writes
        tracked_write(region, region.from_offset(0), b"")
        assert region.media.counters.writes == before
        assert region.dirty[0].records == []

    def test_memset(self):
        region = make_region()
        tracked_memset(region, region.from_offset(10), 0xAB, 6)
        assert region.working[10:16] == b"\xab" * 6
        tracked_memset(region, region.from_offset(0), 0x1FF, 2)  # value masked to a byte
        assert region.working[0:2] == b"\xff\xff"

    def test_memcpy(self):
        region = make_region()
        tracked_memcpy(region, region.from_offset(4), b"\x01\x02\x03")
        assert region.working[4:7] == b"\x01\x02\x03"

    def test_memmove_overlap_both_directions(self):
        region = make_region()
        oracle = bytearray(96)
        region.working[0:10] = oracle[0:10] = bytes(range(10))

        tracked_memmove(region, region.from_offset(2), region.from_offset(0), 6)
        oracle[2:8] = bytes(oracle[0:6])
        assert region.working == oracle

        tracked_memmove(region, region.from_offset(0), region.from_offset(3), 6)
        oracle[0:6] = bytes(oracle[3:9])
        assert region.working == oracle

    def test_memmove_source_past_region(self):
        region = make_region()
        with pytest.raises(RangeError):
            tracked_memmove(region, region.from_offset(0), region.from_offset(92), 8)

    def test_each_store_is_one_media_write_no_flush(self):
        region = make_region(region_size=1024, slot_size=65536)
        before = region.media.counters
        writes0, flushes0, fences0 = before.writes, before.flushes, before.fences
        for i in range(100):
            tracked_write(region, region.from_offset(i * 8), b"\xaa" * 8)
        c = region.media.counters
        assert c.writes - writes0 == 100  # one undo append each
        assert c.flushes == flushes0  # appends are unflushed
        assert c.fences == fences0

    def test_log_full_leaves_working_unmutated(self):
        region = make_region(region_size=4096, slot_size=64)  # capacity 48: two entries
        addr = region.from_offset(0)
        tracked_write(region, addr, b"\x01" * 8)
        tracked_write(region, addr, b"\x02" * 8)
        with pytest.raises(LogFullError):
            tracked_write(region, addr, b"\x03" * 8)
        assert region.working[:8] == b"\x02" * 8
        assert len(region.dirty[0].records) == 2

    def test_undo_logging_off_records_dirty_only(self):
        region = make_region()
        region.undo_logging = False
        tracked_write(region, region.from_offset(0), b"abcd")
        assert region.logs[0].tail == 0
        assert [(r.offset, r.size) for r in region.dirty[0].records] == [(0, 4)]


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.one_of(
            st.tuples(st.just("write"), st.integers(0, 88), st.binary(min_size=1, max_size=8)),
            st.tuples(st.just("memset"), st.integers(0, 88), st.integers(0, 255)),
            st.tuples(
                st.just("memmove"), st.integers(0, 80), st.integers(0, 80)
            ),
        ),
        max_size=12,
    )
)
def test_tracked_ops_match_bytearray_oracle(ops):
    region = make_region(slot_size=4096)
    oracle = bytearray(96)
    for op in ops:
        if op[0] == "write":
            _, off, data = op
            data = data[: 96 - off]
            if not data:
                continue
            tracked_write(region, region.from_offset(off), data)
            oracle[off : off + len(data)] = data
        elif op[0] == "memset":
            _, off, val = op
            length = min(8, 96 - off)
            tracked_memset(region, region.from_offset(off), val, length)
            oracle[off : off + length] = bytes([val]) * length
        else:
            _, dst, src = op
            tracked_memmove(region, region.from_offset(dst), region.from_offset(src), 8)
            oracle[dst : dst + 8] = bytes(oracle[src : src + 8])
    assert region.working == oracle
