"""Redo-log baseline: commit protocol, crash windows, recovery idempotence."""

import pytest

from famsync.errors import RangeError
from famsync.interpose import tracked_write
from famsync.media import MediaConfig, SimulatedMedia
from famsync.region import PersistentRegion, RegionConfig
from famsync.wal import REC_HEADER, WAL_HEADER, WalArea, wal_recover


def make_wal(region_size=96, threads=1, slot_size=1024):
    config = RegionConfig(region_size, max_threads=threads, slot_size=slot_size)
    media = SimulatedMedia(MediaConfig(capacity_bytes=config.capacity_required, line_size=8))
    region = PersistentRegion.open(config, media)
    return WalArea(region), region


def durable_data(region):
    snap = region.media.durable_snapshot()
    return snap[region.config.data_offset : region.config.data_offset + region.config.region_size]


class TestCommit:
    def test_disables_undo_logging(self):
        wal, region = make_wal()
        assert region.undo_logging is False
        tracked_write(region, region.from_offset(0), b"x")
        assert region.logs[0].tail == 0  # no undo entries

    def test_commit_makes_working_durable(self):
        wal, region = make_wal()
        tracked_write(region, region.from_offset(0), b"hello")
        tracked_write(region, region.from_offset(50), b"world")
        wal.commit()
        assert durable_data(region) == bytes(region.working)

    def test_counters(self):
        wal, region = make_wal()
        tracked_write(region, region.from_offset(0), b"12345")
        fences_before = region.media.counters.fences
        wal.commit()
        assert wal.commits == 1
        assert wal.durability_points == 2
        assert region.media.counters.fences - fences_before == 2
        # One record: 16-byte header plus 5 bytes padded to 8.
        assert wal.bytes_written == REC_HEADER.size + 8
        assert wal.data_bytes == 5

    def test_empty_commit(self):
        wal, region = make_wal()
        wal.commit()
        assert wal.commits == 1
        assert wal.bytes_written == 0
        assert durable_data(region) == bytes(96)

    def test_commit_too_large(self):
        # Slot area of one 64-byte slot leaves less WAL capacity than the
        # blob for a full-region write needs.
        config = RegionConfig(8192, max_threads=1, slot_size=64)
        media = SimulatedMedia(
            MediaConfig(capacity_bytes=config.capacity_required, line_size=8)
        )
        region = PersistentRegion.open(config, media)
        wal = WalArea(region)
        tracked_write(region, region.from_offset(0), bytes(8192))
        with pytest.raises(RangeError):
            wal.commit()

    def test_epoch_advances(self):
        wal, region = make_wal()
        tracked_write(region, region.from_offset(0), b"a")
        wal.commit()
        assert region.sync_epoch == 1


def crash_when(media, predicate):
    def hook():
        if predicate():
            raise RuntimeError("injected crash")

    media.op_hook = hook


class TestCrashWindows:
    def setup_commit(self):
        wal, region = make_wal()
        tracked_write(region, region.from_offset(0), b"v1------")
        tracked_write(region, region.from_offset(16), b"w1------")
        wal.commit()
        tracked_write(region, region.from_offset(0), b"v2------")
        tracked_write(region, region.from_offset(16), b"w2------")
        return wal, region

    def recover_fresh(self, region):
        image = region.media.durable_snapshot()
        media = SimulatedMedia.from_image(image, region.media.config)
        wal_recover(media)
        snap = media.durable_snapshot()
        off = region.config.data_offset
        return snap[off : off + region.config.region_size]

    def test_crash_before_seal_fence_keeps_old(self):
        # Commit ops run write(blob), write(header), flush, fence; dying on
        # the fence leaves the new seal flushed but not durable.
        wal, region = self.setup_commit()
        calls = {"n": -1}

        def predicate():
            calls["n"] += 1
            return calls["n"] == 3

        crash_when(region.media, predicate)
        with pytest.raises(RuntimeError):
            wal.commit()
        region.media.op_hook = None
        data = self.recover_fresh(region)
        assert data[:8] == b"v1------"
        assert data[16:24] == b"w1------"

    def test_crash_right_after_seal_fence_rolls_forward(self):
        # Once the seal is durable the commit wins: recovery redoes it.
        wal, region = self.setup_commit()
        fences0 = region.media.counters.fences
        crash_when(region.media, lambda: region.media.counters.fences == fences0 + 1)
        with pytest.raises(RuntimeError):
            wal.commit()
        region.media.op_hook = None
        data = self.recover_fresh(region)
        assert data[:8] == b"v2------"
        assert data[16:24] == b"w2------"

    def test_crash_mid_apply_redoes_to_new(self):
        wal, region = self.setup_commit()
        fences0 = region.media.counters.fences
        writes_after_fence = {"n": 0}

        def predicate():
            if region.media.counters.fences != fences0 + 1:
                return False
            writes_after_fence["n"] += 1
            return writes_after_fence["n"] == 3  # second data write of two

        crash_when(region.media, predicate)
        with pytest.raises(RuntimeError):
            wal.commit()
        region.media.op_hook = None
        region.media.fence()  # let the straggler line land; redo must fix either way
        data = self.recover_fresh(region)
        assert data[:8] == b"v2------"
        assert data[16:24] == b"w2------"

    def test_crash_after_commit_reset_unfenced(self):
        # The EMPTY header write is deliberately unfenced; a crash that
        # drops it leaves a SEALED WAL whose replay is idempotent.
        wal, region = self.setup_commit()
        wal.commit()
        image = region.media.durable_snapshot()  # EMPTY write may not be durable
        media = SimulatedMedia.from_image(image, region.media.config)
        wal_recover(media)
        snap = media.durable_snapshot()
        off = region.config.data_offset
        assert snap[off : off + 8] == b"v2------"
        assert snap[off + 16 : off + 24] == b"w2------"

    def test_recovery_is_idempotent(self):
        wal, region = self.setup_commit()
        fences0 = region.media.counters.fences
        crash_when(region.media, lambda: region.media.counters.fences == fences0 + 1)
        with pytest.raises(RuntimeError):
            wal.commit()
        region.media.op_hook = None
        image = region.media.durable_snapshot()
        media = SimulatedMedia.from_image(image, region.media.config)
        wal_recover(media)
        first = media.durable_snapshot()
        wal_recover(media)
        assert media.durable_snapshot() == first

    def test_recovery_resets_header(self):
        wal, region = self.setup_commit()
        wal.commit()
        media = SimulatedMedia.from_image(region.media.durable_snapshot(), region.media.config)
        wal_recover(media)
        _, state, count, length, _ = WAL_HEADER.unpack(media.read(40, WAL_HEADER.size))
        assert (state, count, length) == (0, 0, 0)

    def test_torn_blob_is_rejected_by_crc(self):
        # Seal the WAL durably, then corrupt one blob byte: recovery must
        # not apply a half-persisted record set.
        wal, region = self.setup_commit()
        fences0 = region.media.counters.fences
        crash_when(region.media, lambda: region.media.counters.fences == fences0 + 1)
        with pytest.raises(RuntimeError):
            wal.commit()
        region.media.op_hook = None
        image = bytearray(region.media.durable_snapshot())
        image[72 + REC_HEADER.size] ^= 0xFF  # first record's first data byte
        media = SimulatedMedia.from_image(bytes(image), region.media.config)
        assert wal_recover(media) == 0
        snap = media.durable_snapshot()
        off = region.config.data_offset
        assert snap[off : off + 8] == b"v1------"
