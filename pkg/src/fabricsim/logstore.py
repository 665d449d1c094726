"""Persistent append-only circular logs with atomic sequence assignment.

One file per log: a fixed 64-byte header followed by fixed-stride records.
Sequence numbers start at 1 and never repeat; slot layout is circular, so
appending past capacity evicts the oldest entry. Every record carries a
CRC32; a failed checksum on the newest record is treated as a torn write
and discarded on recovery, anywhere else it is corruption.

A bounded message-id dedup index (LRU) is persisted in a sidecar journal so
retried appends return the original sequence number instead of writing twice.
"""

from __future__ import annotations

import io
import os
import re
import struct
import threading
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    CorruptHeader,
    InvalidLogConfig,
    NameCollision,
    PayloadTooLarge,
    SeqEvicted,
    SeqNotAssigned,
    StorageFailure,
    UnknownLog,
)

MAGIC = b"XGFLOG01"
VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<8sIIIIQQ")   # magic, version, element_size, capacity, reserved, next_seq, earliest_seq
_HEADER_CRC = struct.Struct("<I")
_RECORD_PREFIX = struct.Struct("<Q16sQI")  # seq, message_id, created_at_us, payload_len
_CRC = struct.Struct("<I")
RECORD_OVERHEAD = _RECORD_PREFIX.size + _CRC.size  # 40 bytes

DEFAULT_DEDUP_LIMIT = 65_536
_DEDUP_ENTRY = struct.Struct("<16sQ")  # message_id, seq (crc32 appended)
_DEDUP_STRIDE = _DEDUP_ENTRY.size + _CRC.size

_NAME_RE = re.compile(r"[A-Za-z0-9_.\-]{1,128}")


@dataclass(frozen=True)
class LogHeader:
    name: str
    element_size: int
    capacity: int
    next_seq: int
    earliest_seq: int


@dataclass(frozen=True)
class LogEntry:
    seq: int
    payload: bytes
    message_id: bytes
    created_at_us: int


@dataclass(frozen=True)
class ScanResult:
    """Contiguous entries plus an explicit marker for evicted prefixes."""

    entries: list[LogEntry]
    truncated: bool
    first_available: int | None


def _check_name(name: str) -> str:
    if not _NAME_RE.fullmatch(name):
        raise InvalidLogConfig(f"bad log name {name!r}")
    return name


class LogStore:
    """A single on-disk log. Thread safe; only appends serialize."""

    def __init__(self, path: Path, name: str, element_size: int, capacity: int,
                 next_seq: int, earliest_seq: int, dedup_limit: int):
        self.path = Path(path)
        self.name = name
        self.element_size = element_size
        self.capacity = capacity
        self._next_seq = next_seq
        self._earliest_seq = earliest_seq
        self._lock = threading.Lock()
        self._dedup_limit = dedup_limit
        self._dedup: OrderedDict[bytes, int] = OrderedDict()
        self._dedup_journal_entries = 0
        self._fd = os.open(self.path, os.O_RDWR)
        self._dedup_fd = os.open(self._dedup_path(), os.O_RDWR | os.O_CREAT, 0o644)
        self._closed = False
        self.torn_discarded = False

    # -- construction ----------------------------------------------------

    @classmethod
    def create(cls, path: str | os.PathLike, name: str, element_size: int,
               capacity: int, dedup_limit: int = DEFAULT_DEDUP_LIMIT) -> "LogStore":
        _check_name(name)
        if element_size < 1:
            raise InvalidLogConfig(f"element_size must be >= 1, got {element_size}")
        if capacity < 1:
            raise InvalidLogConfig(f"capacity must be >= 1, got {capacity}")
        path = Path(path)
        if path.exists():
            raise NameCollision(f"log file already exists: {path}")
        try:
            fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_EXCL, 0o644)
        except FileExistsError as exc:
            raise NameCollision(f"log file already exists: {path}") from exc
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        try:
            os.write(fd, _pack_header(element_size, capacity, 1, 1))
        finally:
            os.close(fd)
        return cls(path, name, element_size, capacity, 1, 1, dedup_limit)

    @classmethod
    def recover(cls, path: str | os.PathLike, name: str | None = None,
                dedup_limit: int = DEFAULT_DEDUP_LIMIT) -> "LogStore":
        """Reopen a persisted log, discarding a torn final record if present."""
        path = Path(path)
        if not path.exists():
            raise UnknownLog(f"no log file at {path}")
        name = name or path.stem
        element_size, capacity, hdr_next, _ = _read_header(path)
        next_seq, earliest_seq, torn = _scan_live_range(path, element_size,
                                                        capacity, hdr_next)
        store = cls(path, name, element_size, capacity, next_seq, earliest_seq, dedup_limit)
        store.torn_discarded = torn
        store._load_dedup()
        # live records are ground truth for the ids they still hold
        for seq in range(earliest_seq, next_seq):
            entry = store._read_slot(seq)
            if entry is not None:
                store._dedup_remember(entry.message_id, entry.seq, persist=False)
        return store

    # -- public surface ---------------------------------------------------

    @property
    def header(self) -> LogHeader:
        with self._lock:
            return LogHeader(self.name, self.element_size, self.capacity,
                             self._next_seq, self._earliest_seq)

    @property
    def next_seq(self) -> int:
        return self._next_seq

    @property
    def earliest_seq(self) -> int:
        return self._earliest_seq

    def __len__(self) -> int:
        with self._lock:
            return self._next_seq - self._earliest_seq

    def append(self, payload: bytes, message_id: bytes, created_at_us: int = 0) -> int:
        """Durably append; returns the assigned (or original, on dedup) seq."""
        if len(message_id) != 16:
            raise InvalidLogConfig("message_id must be exactly 16 bytes")
        if len(payload) > self.element_size:
            raise PayloadTooLarge(
                f"payload {len(payload)} > element size {self.element_size}")
        with self._lock:
            prior = self._dedup.get(bytes(message_id))
            if prior is not None:
                self._dedup.move_to_end(bytes(message_id))
                return prior
            seq = self._next_seq
            try:
                self._write_slot(seq, payload, message_id, created_at_us)
                self._next_seq = seq + 1
                if self._next_seq - self._earliest_seq > self.capacity:
                    self._earliest_seq = self._next_seq - self.capacity
                self._persist_header()
                self._dedup_remember(bytes(message_id), seq, persist=True)
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            return seq

    def read(self, seq: int) -> LogEntry:
        with self._lock:
            earliest, nxt = self._earliest_seq, self._next_seq
        if seq >= nxt:
            raise SeqNotAssigned(f"seq {seq} not assigned yet (next is {nxt})")
        if seq < earliest:
            raise SeqEvicted(f"seq {seq} evicted (earliest retained is {earliest})")
        entry = self._read_slot(seq)
        if entry is None or entry.seq != seq:
            # slot was overwritten by a concurrent append racing this read
            raise SeqEvicted(f"seq {seq} evicted concurrently")
        return entry

    def scan(self, lo: int, hi: int) -> ScanResult:
        """Entries with lo <= seq <= hi, in order; evicted prefix is marked."""
        if lo > hi:
            return ScanResult([], False, None)
        with self._lock:
            earliest, nxt = self._earliest_seq, self._next_seq
        hi = min(hi, nxt - 1)
        truncated = lo < earliest
        start = max(lo, earliest)
        entries = []
        for seq in range(start, hi + 1):
            entry = self._read_slot(seq)
            if entry is not None and entry.seq == seq:
                entries.append(entry)
        first_available = earliest if truncated and nxt > earliest else None
        return ScanResult(entries, truncated, first_available)

    def resize(self, new_element_size: int) -> None:
        """Change the element size in place; all live payloads must still fit.

        Invalidates any client-side size caches by construction: remote
        appends that declare the old size are rejected with a size mismatch.
        """
        if new_element_size < 1:
            raise InvalidLogConfig("element_size must be >= 1")
        with self._lock:
            live = []
            for seq in range(self._earliest_seq, self._next_seq):
                entry = self._read_slot(seq)
                if entry is not None:
                    if len(entry.payload) > new_element_size:
                        raise InvalidLogConfig(
                            f"live entry seq {entry.seq} has {len(entry.payload)} bytes; "
                            f"cannot shrink element size to {new_element_size}")
                    live.append(entry)
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            old_size = self.element_size
            self.element_size = new_element_size
            try:
                with open(tmp, "wb") as f:
                    f.write(_pack_header(new_element_size, self.capacity,
                                         self._next_seq, self._earliest_seq))
                    f.flush()
                for entry in live:
                    self._write_slot(entry.seq, entry.payload, entry.message_id,
                                     entry.created_at_us, fd_path=tmp)
                os.replace(tmp, self.path)
                os.close(self._fd)
                self._fd = os.open(self.path, os.O_RDWR)
            except OSError as exc:
                self.element_size = old_size
                raise StorageFailure(str(exc)) from exc

    def flush(self) -> None:
        try:
            os.fsync(self._fd)
            os.fsync(self._dedup_fd)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    def close(self) -> None:
        if self._closed:
            return
        with self._lock:
            self._persist_header()
        os.close(self._fd)
        os.close(self._dedup_fd)
        self._closed = True

    # -- on-disk layout ----------------------------------------------------

    def _stride(self) -> int:
        return RECORD_OVERHEAD + self.element_size

    def _slot_offset(self, seq: int) -> int:
        return HEADER_SIZE + ((seq - 1) % self.capacity) * self._stride()

    def _write_slot(self, seq: int, payload: bytes, message_id: bytes,
                    created_at_us: int, fd_path: Path | None = None) -> None:
        padded = payload.ljust(self.element_size, b"\x00")
        body = _RECORD_PREFIX.pack(seq, bytes(message_id), created_at_us, len(payload)) + padded
        record = body + _CRC.pack(zlib.crc32(body))
        if fd_path is None:
            os.pwrite(self._fd, record, self._slot_offset(seq))
        else:
            with open(fd_path, "r+b") as f:
                f.seek(self._slot_offset(seq))
                f.write(record)

    def _read_slot(self, seq: int) -> LogEntry | None:
        raw = os.pread(self._fd, self._stride(), self._slot_offset(seq))
        return _parse_record(raw, self.element_size)

    def _persist_header(self) -> None:
        os.pwrite(self._fd,
                  _pack_header(self.element_size, self.capacity,
                               self._next_seq, self._earliest_seq), 0)

    # -- dedup index --------------------------------------------------------

    def _dedup_path(self) -> Path:
        return self.path.with_suffix(self.path.suffix + ".dedup")

    def _dedup_remember(self, message_id: bytes, seq: int, persist: bool) -> None:
        if message_id in self._dedup:
            self._dedup.move_to_end(message_id)
            return
        self._dedup[message_id] = seq
        while len(self._dedup) > self._dedup_limit:
            self._dedup.popitem(last=False)
        if persist:
            body = _DEDUP_ENTRY.pack(message_id, seq)
            os.write(self._dedup_fd, body + _CRC.pack(zlib.crc32(body)))
            self._dedup_journal_entries += 1
            if self._dedup_journal_entries > max(4 * self._dedup_limit, 1024):
                self._compact_dedup()

    def _compact_dedup(self) -> None:
        tmp = self._dedup_path().with_suffix(".dedup.tmp")
        buf = io.BytesIO()
        for mid, seq in self._dedup.items():
            body = _DEDUP_ENTRY.pack(mid, seq)
            buf.write(body + _CRC.pack(zlib.crc32(body)))
        with open(tmp, "wb") as f:
            f.write(buf.getvalue())
        os.replace(tmp, self._dedup_path())
        os.close(self._dedup_fd)
        self._dedup_fd = os.open(self._dedup_path(), os.O_RDWR)
        os.lseek(self._dedup_fd, 0, os.SEEK_END)
        self._dedup_journal_entries = len(self._dedup)

    def _load_dedup(self) -> None:
        try:
            raw = self._dedup_path().read_bytes()
        except FileNotFoundError:
            return
        count = 0
        for off in range(0, len(raw) - _DEDUP_STRIDE + 1, _DEDUP_STRIDE):
            chunk = raw[off:off + _DEDUP_STRIDE]
            body, crc = chunk[:_DEDUP_ENTRY.size], chunk[_DEDUP_ENTRY.size:]
            if _CRC.unpack(crc)[0] != zlib.crc32(body):
                break  # torn tail; ignore the rest
            mid, seq = _DEDUP_ENTRY.unpack(body)
            self._dedup_remember(mid, seq, persist=False)
            count += 1
        self._dedup_journal_entries = count
        os.lseek(self._dedup_fd, count * _DEDUP_STRIDE, os.SEEK_SET)
        os.ftruncate(self._dedup_fd, count * _DEDUP_STRIDE)


# -- header / record codecs ------------------------------------------------

def _pack_header(element_size: int, capacity: int, next_seq: int, earliest_seq: int) -> bytes:
    body = _HEADER.pack(MAGIC, VERSION, element_size, capacity, 0, next_seq, earliest_seq)
    packed = body + _HEADER_CRC.pack(zlib.crc32(body))
    return packed.ljust(HEADER_SIZE, b"\x00")


def _read_header(path: Path) -> tuple[int, int, int, int]:
    try:
        with open(path, "rb") as f:
            raw = f.read(HEADER_SIZE)
    except OSError as exc:
        raise StorageFailure(str(exc)) from exc
    if len(raw) < HEADER_SIZE:
        raise CorruptHeader(f"{path}: short header ({len(raw)} bytes)")
    body = raw[:_HEADER.size]
    (crc,) = _HEADER_CRC.unpack(raw[_HEADER.size:_HEADER.size + 4])
    if crc != zlib.crc32(body):
        raise CorruptHeader(f"{path}: header checksum mismatch")
    magic, version, element_size, capacity, _, next_seq, earliest_seq = _HEADER.unpack(body)
    if magic != MAGIC:
        raise CorruptHeader(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptHeader(f"{path}: unsupported version {version}")
    if element_size < 1 or capacity < 1:
        raise CorruptHeader(f"{path}: nonsensical header geometry")
    return element_size, capacity, next_seq, earliest_seq


def _parse_record(raw: bytes, element_size: int) -> LogEntry | None:
    """None for blank/short/checksum-failed slots."""
    stride = RECORD_OVERHEAD + element_size
    if len(raw) < stride:
        return None
    body, crc_raw = raw[:stride - 4], raw[stride - 4:stride]
    seq, message_id, created_at_us, payload_len = _RECORD_PREFIX.unpack(body[:_RECORD_PREFIX.size])
    if seq == 0:
        return None
    if _CRC.unpack(crc_raw)[0] != zlib.crc32(body):
        return None
    if payload_len > element_size:
        return None
    payload = body[_RECORD_PREFIX.size:_RECORD_PREFIX.size + payload_len]
    return LogEntry(seq, payload, message_id, created_at_us)


def _scan_live_range(path: Path, element_size: int, capacity: int,
                     header_next: int) -> tuple[int, int, bool]:
    """Reconstruct (next_seq, earliest_seq, torn_discarded) from the records.

    The header's counters may be stale after a crash; records are the truth.
    Exactly one invalid non-blank slot is tolerated, and only if it is where
    the next append would have landed (a torn final write).
    """
    stride = RECORD_OVERHEAD + element_size
    valid: dict[int, int] = {}   # slot -> seq
    bad_slots: list[int] = []
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        for slot in range(capacity):
            raw = f.read(stride)
            if not raw.strip(b"\x00"):
                continue
            entry = _parse_record(raw, element_size)
            if entry is None:
                bad_slots.append(slot)
            elif (entry.seq - 1) % capacity != slot:
                bad_slots.append(slot)
            else:
                valid[slot] = entry.seq
            if len(raw) < stride:
                break
    if not valid:
        if len(bad_slots) > 1:
            raise CorruptHeader(f"{path}: multiple corrupt records")
        if bad_slots and bad_slots[0] != 0:
            raise CorruptHeader(f"{path}: corrupt record in slot {bad_slots[0]}")
        nxt = max(header_next, 1)
        return nxt, nxt, bool(bad_slots)
    max_seq = max(valid.values())
    next_seq = max_seq + 1
    if bad_slots:
        torn_slot = (next_seq - 1) % capacity
        if len(bad_slots) > 1 or bad_slots[0] != torn_slot:
            raise CorruptHeader(f"{path}: corrupt records beyond the torn tail "
                                f"(slots {bad_slots})")
    earliest = min(valid.values())
    if max_seq - earliest + 1 != len(valid):
        raise CorruptHeader(f"{path}: live sequence range has gaps")
    return next_seq, earliest, bool(bad_slots)


class LogRegistry:
    """Per-node namespace of logs rooted at one directory."""

    def __init__(self, root: str | os.PathLike, dedup_limit: int = DEFAULT_DEDUP_LIMIT):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.dedup_limit = dedup_limit
        self._open: dict[str, LogStore] = {}

    def path_for(self, name: str) -> Path:
        _check_name(name)
        return self.root / f"{name}.log"

    def create(self, name: str, element_size: int, capacity: int) -> LogStore:
        if name in self._open:
            raise NameCollision(f"log {name!r} already open on this node")
        store = LogStore.create(self.path_for(name), name, element_size, capacity,
                                dedup_limit=self.dedup_limit)
        self._open[name] = store
        return store

    def exists(self, name: str) -> bool:
        return name in self._open or self.path_for(name).exists()

    def get(self, name: str) -> LogStore:
        store = self._open.get(name)
        if store is None:
            path = self.path_for(name)
            if not path.exists():
                raise UnknownLog(f"no log named {name!r}")
            store = LogStore.recover(path, name, dedup_limit=self.dedup_limit)
            self._open[name] = store
        return store

    def names(self) -> list[str]:
        on_disk = {p.stem for p in self.root.glob("*.log")}
        return sorted(on_disk | set(self._open))

    def close_all(self) -> None:
        for store in self._open.values():
            store.close()
        self._open.clear()
