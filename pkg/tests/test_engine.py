"""The three-fence sync protocol, crash recovery, and sync-from-log parity."""

import pytest

from famsync.engine import fa_msync, recover_region
from famsync.errors import ContractViolationError
from famsync.interpose import tracked_write
from famsync.media import MediaConfig, SimulatedMedia
from famsync.region import PersistentRegion, RegionConfig
from famsync.undolog import SLOT_HEADER_SIZE


def make_region(region_size=96, line=8, threads=2, slot_size=1024):
    config = RegionConfig(region_size, max_threads=threads, slot_size=slot_size)
    media = SimulatedMedia(MediaConfig(capacity_bytes=config.capacity_required, line_size=line))
    return PersistentRegion.open(config, media)


def durable_data(region):
    snap = region.media.durable_snapshot()
    return snap[region.config.data_offset : region.config.data_offset + region.config.region_size]


class TestSyncReport:
    def test_clean_sync_counts(self):
        region = make_region()
        report = fa_msync(region)
        assert report.epoch == 1
        assert report.entries_sealed == 0
        assert report.logged_bytes == 0
        assert report.coalesced_bytes == 0
        assert report.bytes_copied == 0
        assert report.fences_issued == 3
        assert region.sync_history == [report]

    def test_single_store_copies_one_line(self):
        region = make_region()
        tracked_write(region, region.from_offset(3), b"\x42")
        report = fa_msync(region)
        assert report.entries_sealed == 1
        assert report.logged_bytes == 1
        assert report.coalesced_bytes == 1
        assert report.bytes_copied == 8  # widened to the line
        assert durable_data(region)[3] == 0x42

    def test_fences_parameter(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"x")
        assert fa_msync(region, fences=2).fences_issued == 2
        tracked_write(region, region.from_offset(0), b"y")
        assert fa_msync(region, fences=3).fences_issued == 3
        with pytest.raises(ValueError):
            fa_msync(region, fences=4)
        with pytest.raises(ValueError):
            fa_msync(region, fences=1)

    def test_epoch_increments(self):
        region = make_region()
        for want in (1, 2, 3):
            assert fa_msync(region).epoch == want

    def test_copy_align_widens_to_pages(self):
        region = make_region(region_size=16384, line=64)
        tracked_write(region, region.from_offset(5000), b"\x99")
        report = fa_msync(region, copy_align=4096)
        assert report.bytes_copied == 4096
        assert durable_data(region)[5000] == 0x99


class TestDurability:
    def test_durable_equals_working_after_sync(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"alpha")
        tracked_write(region, region.from_offset(40), b"beta")
        fa_msync(region)
        assert durable_data(region) == bytes(region.working)

    def test_durable_unchanged_before_sync(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"alpha")
        assert durable_data(region) == bytes(96)

    def test_logs_retired_after_sync(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"alpha")
        fa_msync(region)
        assert all(log.tail == 0 for log in region.logs)
        assert all(not d.records for d in region.dirty)
        # A second open sees nothing to roll back.
        again = PersistentRegion.open(region.config, region.media)
        assert again.last_recovery_count == 0


class TestProtocolOrder:
    def test_seal_copy_retire_sequence(self):
        # Audit the raw media event stream: all undo-area activity for the
        # seal must precede fence 1, every data write must sit strictly
        # between fences 1 and 2, and invalidation after fence 2.
        region = make_region()
        tracked_write(region, region.from_offset(0), b"\x01" * 8)
        tracked_write(region, region.from_offset(32), b"\x02" * 8)
        region.media.record_events = True
        fa_msync(region)
        region.media.record_events = False

        events = region.media.events
        fence_positions = [i for i, e in enumerate(events) if e[0] == "fence"]
        assert len(fence_positions) == 3
        f1, f2, f3 = fence_positions
        data_start = region.config.data_offset
        for i, (kind, offset, length) in enumerate(events):
            if kind != "write":
                continue
            if offset >= data_start:
                assert f1 < i < f2, "data writes belong to the copy step"
            elif i < f1:
                pass  # seal header
            else:
                assert f2 < i < f3, "log-area writes after the copy are invalidations"

    def test_header_write_is_single_line(self):
        # The slot header must never be written in pieces: a torn
        # state/tail pair would be unrecoverable.
        region = make_region()
        tracked_write(region, region.from_offset(0), b"\x01")
        region.media.record_events = True
        fa_msync(region)
        slot0 = region.config.slot_offset(0)
        header_writes = [
            e for e in region.media.events
            if e[0] == "write" and e[1] == slot0
        ]
        assert header_writes, "seal and invalidate both rewrite the header"
        assert all(length == SLOT_HEADER_SIZE for _, _, length in header_writes)


def crash_after_first_fence(region, ops_past_fence):
    """Install an op hook that raises once N ops have run after fence 1."""
    fences0 = region.media.counters.fences
    seen = {"n": -1}

    def hook():
        if region.media.counters.fences - fences0 != 1:
            return
        seen["n"] += 1
        if seen["n"] == ops_past_fence:
            raise RuntimeError("injected crash")

    region.media.op_hook = hook


class TestCrashRecovery:
    def test_crash_before_copy_recovers_previous_image(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"v1------")
        fa_msync(region)
        tracked_write(region, region.from_offset(0), b"v2------")

        crash_after_first_fence(region, 0)  # sealed, data area untouched
        with pytest.raises(RuntimeError):
            fa_msync(region)
        region.media.op_hook = None

        count = recover_region(region)
        assert count == 1
        assert bytes(region.working[:8]) == b"v1------"
        assert durable_data(region)[:8] == b"v1------"

    def test_crash_mid_copy_recovers_previous_image(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"v1------")
        tracked_write(region, region.from_offset(32), b"w1------")
        fa_msync(region)
        tracked_write(region, region.from_offset(0), b"v2------")
        tracked_write(region, region.from_offset(32), b"w2------")

        # Ops after fence 1 run write/flush per range; crash before the
        # second range's write, then let its flushed line commit.
        crash_after_first_fence(region, 2)
        with pytest.raises(RuntimeError):
            fa_msync(region)
        region.media.op_hook = None
        region.media.fence()  # power did not fail; pending line may land

        assert recover_region(region) == 1
        assert bytes(region.working[:8]) == b"v1------"
        assert bytes(region.working[32:40]) == b"w1------"
        assert durable_data(region) == bytes(region.working)

    def test_region_usable_after_recovery(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"v1------")
        fa_msync(region)
        tracked_write(region, region.from_offset(0), b"v2------")

        crash_after_first_fence(region, 0)
        with pytest.raises(RuntimeError):
            fa_msync(region)
        region.media.op_hook = None
        recover_region(region)

        tracked_write(region, region.from_offset(8), b"after")
        fa_msync(region)
        assert durable_data(region)[:13] == b"v1------after"

    def test_recover_region_resets_volatile_state(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"pending")
        recover_region(region)
        assert all(log.tail == 0 for log in region.logs)
        assert all(not d.records for d in region.dirty)
        assert bytes(region.working) == bytes(96)  # reloaded from durable


class TestSyncFromLog:
    def test_byte_identical_result(self):
        stores = [(0, b"aaaa"), (13, b"bb"), (64, b"cccccccc"), (13, b"BB")]
        images = []
        for from_log in (False, True):
            region = make_region()
            for off, data in stores:
                tracked_write(region, region.from_offset(off), data)
            fa_msync(region, sync_from_log=from_log)
            images.append(region.media.durable_snapshot())
        assert images[0] == images[1]

    def test_default_path_never_reads_media(self):
        region = make_region()
        reads_before = region.media.counters.reads
        tracked_write(region, region.from_offset(0), b"x" * 8)
        fa_msync(region)
        assert region.media.counters.reads == reads_before

    def test_log_path_reads_slots(self):
        region = make_region()
        tracked_write(region, region.from_offset(0), b"x" * 8)
        reads_before = region.media.counters.reads
        fa_msync(region, sync_from_log=True)
        assert region.media.counters.reads > reads_before


class TestContractCheck:
    def test_overlapping_threads_detected(self):
        import threading

        region = make_region()
        region.debug_contract = True
        tracked_write(region, region.from_offset(0), b"\x01" * 8)

        def other():
            tracked_write(region, region.from_offset(4), b"\x02" * 8)

        t = threading.Thread(target=other)
        t.start()
        t.join()
        with pytest.raises(ContractViolationError):
            fa_msync(region)

    def test_disjoint_threads_pass(self):
        import threading

        region = make_region()
        region.debug_contract = True
        tracked_write(region, region.from_offset(0), b"\x01" * 8)

        def other():
            tracked_write(region, region.from_offset(32), b"\x02" * 8)

        t = threading.Thread(target=other)
        t.start()
        t.join()
        report = fa_msync(region)
        assert report.entries_sealed == 2
        assert durable_data(region)[:8] == b"\x01" * 8
        assert durable_data(region)[32:40] == b"\x02" * 8
