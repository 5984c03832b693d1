"""Pluggable entropy sources: inline MT19937, OS entropy, and a file-backed pool.

The pool models a pre-buffered hardware randomness feed: unit-interval float64
values generated offline, stored on disk in a fixed binary format, and consumed
one per token through a circular cursor with threshold-triggered replenishment.
"""

from __future__ import annotations

import os
import struct
import threading
from enum import Enum
from typing import Optional

import numpy as np

from hijacklab.mt19937 import PrngState, UniformConvention, generate_u32, next_uniform

POOL_MAGIC = b"QPOOL1\x00\x00"
POOL_VERSION = 1
_HEADER = struct.Struct("<8sIQB7s")  # magic, version, count, fill tag, reserved
HEADER_SIZE = _HEADER.size
_VALUE_SIZE = 8

_TWO53_INV = 1.0 / 9007199254740992.0


class SourceKind(Enum):
    MT_INLINE = "mt"
    OS_ENTROPY = "os"
    POOL = "pool"
    HIJACKED = "hijacked"


# On-disk fill-source tags.
FILL_TAG_OS = 0
FILL_TAG_MT = 1
FILL_TAG_EXTERNAL = 2

_KIND_TO_TAG = {SourceKind.OS_ENTROPY: FILL_TAG_OS, SourceKind.MT_INLINE: FILL_TAG_MT}
_TAG_NAMES = {FILL_TAG_OS: "os", FILL_TAG_MT: "mt", FILL_TAG_EXTERNAL: "external-hardware"}


class EntropyError(Exception):
    """Base class for entropy-source failures."""


class SourceUnavailableError(EntropyError):
    """The underlying entropy feed could not produce data."""


class PoolFormatError(EntropyError):
    """Base class for pool-file format violations."""


class PoolMagicError(PoolFormatError):
    """The pool file does not start with the expected magic bytes."""


class PoolVersionError(PoolFormatError):
    """The pool file declares an unsupported format version."""


class PoolCountError(PoolFormatError):
    """The declared value count does not match the stored payload."""


class PoolValueError(PoolFormatError):
    """A stored or generated value fell outside [0, 1)."""


class PoolExhaustedError(EntropyError):
    """The pool ran out of values with replenishment and wrapping disabled."""


class EntropySource:
    """Behavior contract: ``next_unit()`` returns a value in [0, 1)."""

    kind: SourceKind

    def next_unit(self, dist=None) -> float:
        raise NotImplementedError

    def next_block(self, count: int) -> np.ndarray:
        """Bulk draw; the default just loops next_unit."""
        return np.array([self.next_unit() for _ in range(count)], dtype=np.float64)


class MtInlineSource(EntropySource):
    """Deterministic source backed by an in-process MT19937 state."""

    kind = SourceKind.MT_INLINE

    def __init__(self, state: PrngState, convention: UniformConvention = UniformConvention.DOUBLE53):
        self.state = state
        self.convention = convention
        self.draws = 0

    def next_unit(self, dist=None) -> float:
        self.draws += 1
        return next_uniform(self.state, self.convention)

    def next_block(self, count: int) -> np.ndarray:
        self.draws += count
        if self.convention is UniformConvention.SINGLE24:
            raw = generate_u32(self.state, count)
            return (raw >> np.uint32(8)).astype(np.float64) * (1.0 / 16777216.0)
        raw = generate_u32(self.state, 2 * count)
        a = (raw[0::2] >> np.uint32(5)).astype(np.float64)
        b = (raw[1::2] >> np.uint32(6)).astype(np.float64)
        return (a * 67108864.0 + b) * _TWO53_INV


class OsEntropySource(EntropySource):
    """System entropy reduced to unit-interval doubles (53-bit mantissa)."""

    kind = SourceKind.OS_ENTROPY

    def next_unit(self, dist=None) -> float:
        try:
            raw = os.urandom(8)
        except OSError as exc:  # pragma: no cover - platform dependent
            raise SourceUnavailableError(f"system entropy unavailable: {exc}") from exc
        return (int.from_bytes(raw, "little") >> 11) * _TWO53_INV

    def next_block(self, count: int) -> np.ndarray:
        try:
            raw = os.urandom(8 * count)
        except OSError as exc:  # pragma: no cover - platform dependent
            raise SourceUnavailableError(f"system entropy unavailable: {exc}") from exc
        words = np.frombuffer(raw, dtype="<u8")
        return (words >> np.uint64(11)).astype(np.float64) * _TWO53_INV


def os_next() -> float:
    """One unit-interval value from system entropy."""
    return OsEntropySource().next_unit()


def mt_next(state: PrngState, convention: UniformConvention = UniformConvention.DOUBLE53) -> float:
    """One unit-interval value from an MT19937 state (same path as next_uniform)."""
    return next_uniform(state, convention)


def _write_header(fh, count: int, fill_tag: int) -> None:
    fh.write(_HEADER.pack(POOL_MAGIC, POOL_VERSION, count, fill_tag, b"\x00" * 7))


def _draw_validated(source: EntropySource, count: int) -> np.ndarray:
    values = np.ascontiguousarray(source.next_block(count), dtype="<f8")
    if values.shape != (count,):
        raise PoolValueError(f"fill source returned {values.shape} values, expected {count}")
    if np.any(values < 0.0) or np.any(values >= 1.0) or not np.all(np.isfinite(values)):
        raise PoolValueError("fill source produced a value outside [0, 1)")
    return values


def generate_pool(
    count: int,
    fill_source: EntropySource,
    path,
    *,
    fill_tag: Optional[int] = None,
    chunk: int = 1 << 18,
    **reader_options,
) -> "PoolReader":
    """Create a pool file of ``count`` unit-interval float64 values and open it.

    Values come from ``fill_source`` and are validated before writing. The
    returned reader keeps the fill source attached so replenishment can extend
    the same stream.
    """
    if count < 1:
        raise ValueError(f"pool count must be >= 1, got {count}")
    if fill_tag is None:
        fill_tag = _KIND_TO_TAG.get(fill_source.kind, FILL_TAG_EXTERNAL)
    with open(path, "wb") as fh:
        _write_header(fh, count, fill_tag)
        remaining = count
        while remaining:
            take = min(remaining, chunk)
            fh.write(_draw_validated(fill_source, take).tobytes())
            remaining -= take
    reader_options.setdefault("replenish_source", fill_source)
    return PoolReader(path, **reader_options)


def read_pool_header(path) -> tuple:
    """Validate a pool header and return (count, fill_tag)."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        blob = fh.read(HEADER_SIZE)
    if len(blob) < HEADER_SIZE or blob[:8] != POOL_MAGIC:
        raise PoolMagicError(f"{path}: bad magic bytes, not a pool file")
    magic, version, count, fill_tag, _reserved = _HEADER.unpack(blob)
    if version != POOL_VERSION:
        raise PoolVersionError(f"{path}: unsupported pool version {version}")
    expected = HEADER_SIZE + count * _VALUE_SIZE
    if size != expected:
        raise PoolCountError(f"{path}: header declares {count} values ({expected} bytes) but file has {size} bytes")
    return count, fill_tag


class PoolReader(EntropySource):
    """Sequential consumer of a pool file with buffered segment reads.

    Each ``next_unit`` call is served from an in-memory segment; disk is
    touched only when the segment is exhausted. When the remaining fraction
    drops below ``replenish_threshold`` and a fill source is attached, a
    background thread appends a fresh segment of the original pool size.
    Instrumentation counters expose the read-path cost.
    """

    kind = SourceKind.POOL

    def __init__(
        self,
        path,
        *,
        replenish_source: Optional[EntropySource] = None,
        replenish_threshold: float = 0.1,
        allow_wrap: bool = False,
        segment_size: int = 1 << 16,
    ):
        if not 0 < replenish_threshold < 1:
            raise ValueError(f"replenish_threshold must be in (0, 1), got {replenish_threshold}")
        if segment_size < 1:
            raise ValueError("segment_size must be positive")
        self.path = os.fspath(path)
        self.count, self.fill_tag = read_pool_header(self.path)
        self.initial_count = self.count
        self.cursor = 0
        self.replenish_source = replenish_source
        self.replenish_threshold = replenish_threshold
        self.allow_wrap = allow_wrap
        self.segment_size = segment_size
        self.wrapped = False
        # Instrumentation: per-token buffer reads vs. actual file activity.
        self.buffer_reads = 0
        self.segment_loads = 0
        self.file_opens = 1
        self.values_appended = 0
        self._fh = open(self.path, "rb")
        self._segment = np.empty(0, dtype=np.float64)
        self._segment_start = 0
        self._replenish_thread: Optional[threading.Thread] = None
        self._replenish_error: Optional[Exception] = None

    # -- segment management -------------------------------------------------

    def _load_segment(self, start: int) -> None:
        length = min(self.segment_size, self.count - start)
        self._fh.seek(HEADER_SIZE + start * _VALUE_SIZE)
        blob = self._fh.read(length * _VALUE_SIZE)
        if len(blob) != length * _VALUE_SIZE:
            raise PoolCountError(f"{self.path}: payload ends before declared count")
        segment = np.frombuffer(blob, dtype="<f8")
        if np.any(segment < 0.0) or np.any(segment >= 1.0) or not np.all(np.isfinite(segment)):
            raise PoolValueError(f"{self.path}: stored value outside [0, 1)")
        self._segment = segment
        self._segment_start = start
        self.segment_loads += 1

    @property
    def resident_bytes(self) -> int:
        """In-memory footprint of the open reader (its buffered segment)."""
        return int(self._segment.nbytes)

    @property
    def remaining(self) -> int:
        return self.count - self.cursor

    # -- replenishment -------------------------------------------------------

    def _replenish_worker(self, extra: int) -> None:
        try:
            values = _draw_validated(self.replenish_source, extra)
            with open(self.path, "r+b") as fh:
                fh.seek(0, os.SEEK_END)
                fh.write(values.tobytes())
                fh.flush()
                new_count = self.count + extra
                fh.seek(0)
                _write_header(fh, new_count, self.fill_tag)
                fh.flush()
            self.values_appended += extra
            self.count = new_count  # published last: readers never see unwritten payload
        except Exception as exc:  # noqa: BLE001 - surfaced on the read path
            self._replenish_error = exc

    def _maybe_trigger_replenish(self) -> None:
        if self.replenish_source is None or self.wrapped:
            return
        if self._replenish_thread is not None and self._replenish_thread.is_alive():
            return
        if self.remaining >= self.replenish_threshold * self.count:
            return
        thread = threading.Thread(target=self._replenish_worker, args=(self.initial_count,), daemon=True)
        self._replenish_thread = thread
        thread.start()

    def _wait_for_replenish(self) -> None:
        if self._replenish_thread is not None:
            self._replenish_thread.join()
            self._replenish_thread = None
        if self._replenish_error is not None:
            error, self._replenish_error = self._replenish_error, None
            raise error

    # -- read path -----------------------------------------------------------

    def next_unit(self, dist=None) -> float:
        if self.cursor >= self.count:
            # Normally replenishment has landed long before this point.
            self._wait_for_replenish()
            if self.cursor >= self.count:
                if self.allow_wrap:
                    self.cursor = 0
                    self.wrapped = True
                else:
                    raise PoolExhaustedError(
                        f"{self.path}: pool of {self.count} values exhausted (replenishment disabled)"
                    )
        offset = self.cursor - self._segment_start
        if not 0 <= offset < self._segment.shape[0]:
            self._load_segment(self.cursor)
            offset = 0
        value = float(self._segment[offset])
        self.cursor += 1
        self.buffer_reads += 1
        self._maybe_trigger_replenish()
        return value

    def next_block(self, count: int) -> np.ndarray:
        return np.array([self.next_unit() for _ in range(count)], dtype=np.float64)

    def close(self) -> None:
        if self._replenish_thread is not None and self._replenish_thread.is_alive():
            self._replenish_thread.join()
        self._fh.close()

    def __enter__(self) -> "PoolReader":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def open_pool(path, **options) -> PoolReader:
    """Open an existing pool file for sequential consumption."""
    return PoolReader(path, **options)


def fill_tag_name(tag: int) -> str:
    return _TAG_NAMES.get(tag, f"unknown({tag})")
