"""Failure-atomic msync over a working/backing copy pair.

Applications mutate a fast in-memory working copy through the store
interposition layer, which records undo entries in per-thread persistent
logs and dirty ranges in volatile lists.  fa_msync then makes the durable
backing copy equal the working copy, atomically with respect to crashes at
any cache-line flush/fence boundary.
"""

from .engine import SyncReport, fa_msync, recover_region
from .errors import (
    ConfigError,
    ContractViolationError,
    CorruptionError,
    EnumerationBoundError,
    FamsyncError,
    LogFullError,
    MediaError,
    OutOfMemoryError,
    RangeError,
)
from .heap import Heap, HeapWalk, walk_image
from .interpose import (
    on_store,
    tracked_memcpy,
    tracked_memmove,
    tracked_memset,
    tracked_write,
)
from .kv import KvStore
from .media import (
    CrashState,
    MediaConfig,
    MediaCounters,
    RealFileMedia,
    SimulatedMedia,
    open_media,
)
from .region import PersistentRegion, RegionConfig, recover_media

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractViolationError",
    "CorruptionError",
    "CrashState",
    "EnumerationBoundError",
    "FamsyncError",
    "Heap",
    "HeapWalk",
    "KvStore",
    "LogFullError",
    "MediaConfig",
    "MediaCounters",
    "MediaError",
    "OutOfMemoryError",
    "PersistentRegion",
    "RangeError",
    "RealFileMedia",
    "RegionConfig",
    "SimulatedMedia",
    "SyncReport",
    "fa_msync",
    "on_store",
    "open_media",
    "recover_media",
    "recover_region",
    "tracked_memcpy",
    "tracked_memmove",
    "tracked_memset",
    "tracked_write",
    "walk_image",
    "__version__",
]
