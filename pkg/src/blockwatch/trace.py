"""Block IO trace model and the BWT1 binary / CSV codecs.

A trace is an ordered stream of block IO events plus device metadata.
Payload bytes are never stored: each write event carries a precomputed
mean 4 KiB-chunk Shannon entropy in per-mille (0..1000), reads carry the
sentinel 65535 (0 is a legal entropy value, so it cannot double as the
"no entropy" marker).

Traces are immutable after construction and safe to share across threads;
both codecs are pure functions of their input.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, InvariantViolation, ParseError, TruncatedRecord

SECTOR = 512

READ = 0
WRITE = 1
DIRECTIONS = ("read", "write")

SRC_BENIGN = 0
SRC_RANSOMWARE = 1
SRC_OS_NOISE = 2
SOURCES = ("benign", "ransomware", "os_noise")

READ_ENTROPY_SENTINEL = 0xFFFF

FS_TAGS = ("NTFS", "XFS", "EXT4", "OTHER")

#: Wire record layout: 24 bytes, little-endian, no padding.
#: flags bit 0 = direction (0 read / 1 write), bits 1-2 = source.
EVENT_DTYPE = np.dtype(
    [
        ("timestamp_ns", "<u8"),
        ("lba", "<u8"),
        ("length_bytes", "<u4"),
        ("entropy_pm", "<u2"),
        ("flags", "<u2"),
    ]
)
assert EVENT_DTYPE.itemsize == 24

_MAGIC = b"BWT1"
_VERSION = 1
# magic, version, fs_tag, reserved, capacity, seed, window_us, count, tag len
_HEADER = struct.Struct("<4sHBBQQQQH")


@dataclass(frozen=True, slots=True)
class IoEvent:
    """One block IO operation.

    timestamp_ns  nanoseconds since trace start
    direction     READ (0) or WRITE (1)
    lba           512-byte sector index of the first sector touched
    length_bytes  transfer size; positive multiple of 512
    entropy_pm    write payload entropy in per-mille (0..1000);
                  READ_ENTROPY_SENTINEL for reads
    source        generator attribution (SRC_BENIGN / SRC_RANSOMWARE /
                  SRC_OS_NOISE), used for downstream labeling
    """

    timestamp_ns: int
    direction: int
    lba: int
    length_bytes: int
    entropy_pm: int
    source: int = SRC_BENIGN

    @property
    def flags(self) -> int:
        return (self.direction & 1) | (self.source << 1)

    @property
    def end_byte(self) -> int:
        return self.lba * SECTOR + self.length_bytes

    def as_record(self) -> tuple:
        return (self.timestamp_ns, self.lba, self.length_bytes,
                self.entropy_pm, self.flags)


def _event_from_row(row) -> IoEvent:
    flags = int(row["flags"])
    return IoEvent(
        timestamp_ns=int(row["timestamp_ns"]),
        direction=flags & 1,
        lba=int(row["lba"]),
        length_bytes=int(row["length_bytes"]),
        entropy_pm=int(row["entropy_pm"]),
        source=flags >> 1,
    )


@dataclass(frozen=True, slots=True)
class TraceMeta:
    """Device and capture metadata carried alongside the event stream.

    The epoch window is stored with microsecond resolution so binary and
    CSV round-trips are bit-exact; values are clamped to the supported
    [1, 60] second range at construction.
    """

    capacity_bytes: int
    fs_tag: str = "OTHER"
    scenario_tag: str = ""
    seed: int = 0
    epoch_window_s: float = 5.0

    def __post_init__(self):
        if self.capacity_bytes <= 0 or self.capacity_bytes % SECTOR:
            raise ValueError(f"capacity_bytes must be a positive multiple of "
                             f"{SECTOR}, got {self.capacity_bytes}")
        if self.fs_tag not in FS_TAGS:
            raise ValueError(f"fs_tag must be one of {FS_TAGS}")
        if not 1.0 <= self.epoch_window_s <= 60.0:
            raise ValueError("epoch_window_s must lie in [1, 60]")
        # Normalize to whole microseconds (codec resolution).
        object.__setattr__(
            self, "epoch_window_s", round(self.epoch_window_s * 1e6) / 1e6
        )

    @property
    def total_sectors(self) -> int:
        return self.capacity_bytes // SECTOR

    @property
    def epoch_window_ns(self) -> int:
        return round(self.epoch_window_s * 1e6) * 1000


class Trace:
    """Immutable trace: metadata plus a structured event array.

    Events are stored in a numpy structured array (`EVENT_DTYPE`), which
    is also the binary wire layout. Iteration yields `IoEvent` objects.
    """

    __slots__ = ("meta", "arr")

    def __init__(self, meta: TraceMeta, events, validate: bool = True):
        self.meta = meta
        if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
            arr = events
        else:
            ev = list(events)
            arr = np.zeros(len(ev), dtype=EVENT_DTYPE)
            for i, e in enumerate(ev):
                arr[i] = e.as_record()
        arr.setflags(write=False)
        self.arr = arr
        if validate:
            self.validate()

    def __len__(self) -> int:
        return len(self.arr)

    def __iter__(self):
        for row in self.arr:
            yield _event_from_row(row)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.meta == other.meta and np.array_equal(self.arr, other.arr)

    def event(self, i: int) -> IoEvent:
        return _event_from_row(self.arr[i])

    def validate(self) -> None:
        """Check every stream invariant; raise InvariantViolation on the
        first offending record."""
        a = self.arr
        if len(a) == 0:
            return
        flags = a["flags"]
        bad = flags >> 3 != 0
        _raise_first(bad, "reserved flag bits set")
        bad = (flags >> 1) > SRC_OS_NOISE
        _raise_first(bad, "unknown source code")

        ts = a["timestamp_ns"]
        bad = np.zeros(len(a), dtype=bool)
        bad[1:] = ts[1:] < ts[:-1]
        _raise_first(bad, "timestamps decrease")

        length = a["length_bytes"]
        bad = (length == 0) | (length % SECTOR != 0)
        _raise_first(bad, "length_bytes not a positive multiple of 512")

        cap = self.meta.capacity_bytes
        lba = a["lba"]
        bad = lba > cap // SECTOR  # guards the uint64 product below
        _raise_first(bad, "lba beyond device")
        bad = lba * SECTOR + length > cap
        _raise_first(bad, "IO extends past device capacity")

        is_write = (flags & 1) == 1
        pm = a["entropy_pm"]
        bad = is_write & (pm > 1000)
        _raise_first(bad, "write entropy_pm above 1000")
        bad = ~is_write & (pm != READ_ENTROPY_SENTINEL)
        _raise_first(bad, "read entropy_pm must be the 65535 sentinel")


def _raise_first(bad: np.ndarray, reason: str) -> None:
    if bad.any():
        raise InvariantViolation(int(np.argmax(bad)), reason)


# --- binary codec -----------------------------------------------------------

def encode_binary(trace: Trace) -> bytes:
    """Serialize a valid trace to the BWT1 byte format."""
    tag = trace.meta.scenario_tag.encode("utf-8")
    window_us = round(trace.meta.epoch_window_s * 1e6)
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        FS_TAGS.index(trace.meta.fs_tag),
        0,
        trace.meta.capacity_bytes,
        trace.meta.seed,
        window_us,
        len(trace.arr),
        len(tag),
    )
    return header + tag + trace.arr.tobytes()


def decode_binary(data: bytes) -> Trace:
    """Parse a BWT1 byte stream back into a validated Trace."""
    if len(data) < 4 or data[:4] != _MAGIC:
        raise BadMagic(f"expected {_MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < _HEADER.size:
        raise TruncatedRecord("stream ends inside the header")
    (_, version, fs_code, _, capacity, seed, window_us, count,
     tag_len) = _HEADER.unpack_from(data)
    if version != _VERSION:
        raise BadMagic(f"unsupported version {version}")
    if fs_code >= len(FS_TAGS):
        raise TruncatedRecord(f"unknown fs_tag code {fs_code}")
    body = _HEADER.size
    if len(data) < body + tag_len:
        raise TruncatedRecord("stream ends inside the scenario tag")
    tag = data[body:body + tag_len].decode("utf-8")
    records = data[body + tag_len:]
    expected = count * EVENT_DTYPE.itemsize
    if len(records) < expected:
        got = len(records) // EVENT_DTYPE.itemsize
        raise TruncatedRecord(
            f"expected {count} records, stream holds {got} complete ones"
        )
    if len(records) > expected:
        raise TruncatedRecord(f"{len(records) - expected} trailing bytes "
                              "after the last record")
    meta = TraceMeta(
        capacity_bytes=capacity,
        fs_tag=FS_TAGS[fs_code],
        scenario_tag=tag,
        seed=seed,
        epoch_window_s=window_us / 1e6,
    )
    arr = np.frombuffer(records, dtype=EVENT_DTYPE).copy()
    return Trace(meta, arr)


# --- CSV codec --------------------------------------------------------------

_CSV_COLUMNS = ("timestamp_ns", "direction", "lba", "length_bytes",
                "entropy_pm", "source")

_META_KEYS = ("capacity_bytes", "fs_tag", "scenario_tag", "seed",
              "epoch_window_s")


def write_csv(trace: Trace, fp) -> None:
    """Write a trace as CSV with `#`-prefixed metadata header comments."""
    m = trace.meta
    fp.write(f"# capacity_bytes={m.capacity_bytes}\n")
    fp.write(f"# fs_tag={m.fs_tag}\n")
    fp.write(f"# scenario_tag={m.scenario_tag}\n")
    fp.write(f"# seed={m.seed}\n")
    fp.write(f"# epoch_window_s={m.epoch_window_s!r}\n")
    fp.write(",".join(_CSV_COLUMNS) + "\n")
    a = trace.arr
    dirs = a["flags"] & 1
    srcs = a["flags"] >> 1
    for i in range(len(a)):
        fp.write(
            f"{a['timestamp_ns'][i]},{DIRECTIONS[dirs[i]]},{a['lba'][i]},"
            f"{a['length_bytes'][i]},{a['entropy_pm'][i]},{SOURCES[srcs[i]]}\n"
        )


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    write_csv(trace, buf)
    return buf.getvalue()


def read_csv(fp) -> Trace:
    """Parse the CSV form; inverse of write_csv."""
    meta_kv: dict[str, str] = {}
    rows: list[tuple] = []
    header_seen = False
    lineno = 0
    for raw in fp:
        lineno += 1
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta_kv[key.strip()] = value.strip()
            continue
        fields = line.split(",")
        if not header_seen:
            if tuple(fields) != _CSV_COLUMNS:
                raise ParseError(lineno, 0, "missing or malformed column "
                                            "header row")
            header_seen = True
            continue
        rows.append(_parse_csv_row(fields, lineno))

    for key in _META_KEYS:
        if key not in meta_kv:
            raise ParseError(lineno, 0, f"missing metadata comment '# {key}='")
    try:
        meta = TraceMeta(
            capacity_bytes=int(meta_kv["capacity_bytes"]),
            fs_tag=meta_kv["fs_tag"],
            scenario_tag=meta_kv["scenario_tag"],
            seed=int(meta_kv["seed"]),
            epoch_window_s=float(meta_kv["epoch_window_s"]),
        )
    except ValueError as exc:
        raise ParseError(0, 0, f"bad metadata: {exc}") from exc

    arr = np.array(rows, dtype=EVENT_DTYPE) if rows else \
        np.zeros(0, dtype=EVENT_DTYPE)
    return Trace(meta, arr)


def trace_from_csv(text: str) -> Trace:
    return read_csv(io.StringIO(text))


def _parse_csv_row(fields: list[str], lineno: int) -> tuple:
    if len(fields) != len(_CSV_COLUMNS):
        raise ParseError(lineno, len(fields) - 1,
                         f"expected {len(_CSV_COLUMNS)} fields")
    try:
        ts = int(fields[0])
    except ValueError:
        raise ParseError(lineno, 0, f"bad timestamp {fields[0]!r}") from None
    if fields[1] not in DIRECTIONS:
        raise ParseError(lineno, 1, f"bad direction {fields[1]!r}")
    direction = DIRECTIONS.index(fields[1])
    ints = []
    for col in (2, 3, 4):
        try:
            ints.append(int(fields[col]))
        except ValueError:
            raise ParseError(lineno, col,
                             f"bad integer {fields[col]!r}") from None
    lba, length, pm = ints
    if fields[5] not in SOURCES:
        raise ParseError(lineno, 5, f"bad source {fields[5]!r}")
    source = SOURCES.index(fields[5])
    if not 0 <= ts < 2 ** 64 or not 0 <= lba < 2 ** 64:
        raise ParseError(lineno, 0, "integer out of range")
    if not 0 <= length < 2 ** 32 or not 0 <= pm < 2 ** 16:
        raise ParseError(lineno, 3, "integer out of range")
    return (ts, lba, length, pm, (direction & 1) | (source << 1))


# --- file helpers -----------------------------------------------------------

def save_trace(trace: Trace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_binary(trace))


def load_trace(path) -> Trace:
    with open(path, "rb") as fh:
        return decode_binary(fh.read())
