"""Windowed feature extraction: IO events in one epoch -> 82-slot vector.

Canonical layout
----------------
 [0]      mean write entropy (per-mille); -1 when the epoch has no writes
 [1]      mean absolute deviation of write entropy about that mean
 [2:18]   16-bin write-entropy histogram, uniform over [0, 1000], fractions
 [18]     mean entropy of rewrites (writes overlapping a byte range read
          earlier in the same epoch); -1 when there are none
 [19]     mean normalized read LBA (start sector / total sectors)
 [20:37]  17-bin read-LBA histogram, uniform over [0, 1), fractions
 [37]     mean normalized write LBA
 [38:55]  17-bin write-LBA histogram
 [55]     read throughput, bytes per second over the epoch window
 [56:67]  11-bin read transfer-size histogram (log2-spaced, <4 KiB .. >=2 MiB)
 [67]     write throughput
 [68:79]  11-bin write transfer-size histogram
 [79:82]  filesystem one-hot (NTFS, XFS, EXT4); OTHER -> all zero

Histogram groups are normalized to fractions so the shape of a
distribution is decoupled from event volume; a group whose direction saw
no events is all-zero. The streaming accumulator buffers raw event
columns and computes the vector at finalize through the same routine as
batch extraction, so the two paths agree bit for bit.

One accumulator serves one stream; accumulators are independent and may
run concurrently across traces.
"""

from __future__ import annotations

import csv
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfOrderEvent, ParseError
from .trace import (
    EVENT_DTYPE,
    READ_ENTROPY_SENTINEL,
    SECTOR,
    SRC_RANSOMWARE,
    IoEvent,
    Trace,
    TraceMeta,
)

N_FEATURES = 82
N_BASELINE = 5

XFER_EDGES = (4096, 8192, 16384, 32768, 65536, 131072,
              262144, 524288, 1048576, 2097152)

#: Merged read-interval budget per epoch; above it new ranges are folded
#: into the nearest interval (over-approximates, never misses a rewrite).
READ_INTERVAL_CAP = 65536

_FS_SLOT = {"NTFS": 79, "XFS": 80, "EXT4": 81}


@dataclass(slots=True)
class FeatureVector:
    """One epoch's features plus label and provenance."""

    values: np.ndarray
    label: str | None = None
    epoch_index: int = 0
    scenario_tag: str = ""


@dataclass(frozen=True, slots=True)
class LabelRule:
    """Epoch is `ransomware` iff ransomware-attributed write bytes reach
    `theta` of total write bytes; zero-write epochs are benign."""

    theta: float = 0.10


class IntervalUnion:
    """Sorted, disjoint, non-adjacent byte intervals with a size cap.

    Once `cap` intervals exist, an insert that would create a new interval
    instead widens the nearest existing one (bridging the gap), which can
    only enlarge the union.
    """

    __slots__ = ("starts", "ends", "cap")

    def __init__(self, cap: int = READ_INTERVAL_CAP):
        self.starts: list[int] = []
        self.ends: list[int] = []
        self.cap = cap

    def __len__(self) -> int:
        return len(self.starts)

    def insert(self, s: int, e: int) -> None:
        starts, ends = self.starts, self.ends
        i = bisect_left(ends, s)
        j = bisect_right(starts, e)
        if i < j:  # overlaps or touches intervals [i, j)
            s = min(s, starts[i])
            e = max(e, ends[j - 1])
            del starts[i:j], ends[i:j]
            starts.insert(i, s)
            ends.insert(i, e)
        elif len(starts) < self.cap:
            starts.insert(i, s)
            ends.insert(i, e)
        else:
            self._fold_nearest(i, s, e)

    def _fold_nearest(self, i: int, s: int, e: int) -> None:
        starts, ends = self.starts, self.ends
        left_gap = s - ends[i - 1] if i > 0 else None
        right_gap = starts[i] - e if i < len(starts) else None
        if right_gap is None or (left_gap is not None
                                 and left_gap <= right_gap):
            ends[i - 1] = e
        else:
            starts[i] = s

    def overlaps(self, s: int, e: int) -> bool:
        i = bisect_right(self.ends, s)
        return i < len(self.starts) and self.starts[i] < e


def _rewrite_mask(arr: np.ndarray) -> np.ndarray:
    """Boolean per-event mask: write whose byte range intersects the
    union of byte ranges read earlier in the epoch (event order)."""
    n = len(arr)
    mask = np.zeros(n, dtype=bool)
    dirs = (arr["flags"] & 1).tolist()
    if 0 not in dirs or 1 not in dirs:
        return mask
    starts = (arr["lba"] * SECTOR).tolist()
    lengths = arr["length_bytes"].tolist()
    union = IntervalUnion()
    for i, (d, s, ln) in enumerate(zip(dirs, starts, lengths)):
        if d == 0:
            union.insert(s, s + ln)
        elif union.overlaps(s, s + ln):
            mask[i] = True
    return mask


def compute_features(arr: np.ndarray, meta: TraceMeta) -> np.ndarray:
    """Vectorized 82-slot extraction from a structured epoch array.

    The array must hold the epoch's events in timestamp order (ties in
    original emission order); this is the single code path behind both
    batch and streaming extraction.
    """
    out = np.zeros(N_FEATURES)
    n = len(arr)
    if n == 0:
        raise ValueError("zero-event epochs are not extracted")

    is_write = (arr["flags"] & 1) == 1
    window_s = meta.epoch_window_s
    total_sectors = meta.total_sectors

    pm_w = arr["entropy_pm"][is_write].astype(np.int64)
    nw = len(pm_w)
    nr = n - nw

    if nw:
        pe = pm_w.astype(np.float64)
        mean = pe.mean()
        out[0] = mean
        out[1] = np.abs(pe - mean).mean()
        bins = np.minimum(pm_w * 16 // 1000, 15)
        out[2:18] = np.bincount(bins, minlength=16) / nw
    else:
        out[0] = -1.0

    rewrites = _rewrite_mask(arr)
    if rewrites.any():
        out[18] = arr["entropy_pm"][rewrites].astype(np.float64).mean()
    else:
        out[18] = -1.0

    lba = arr["lba"].astype(np.int64)
    length = arr["length_bytes"].astype(np.int64)
    for direction, mean_slot, hist_slot, tput_slot, xfer_slot, count in (
        (False, 19, 20, 55, 56, nr),
        (True, 37, 38, 67, 68, nw),
    ):
        sel = is_write if direction else ~is_write
        out[tput_slot] = int(length[sel].sum()) / window_s
        if count == 0:
            continue
        lba_d = lba[sel]
        out[mean_slot] = (lba_d / total_sectors).mean()
        idx = lba_d * 17 // total_sectors
        out[hist_slot:hist_slot + 17] = np.bincount(idx, minlength=17) / count
        xbins = np.digitize(length[sel], XFER_EDGES)
        out[xfer_slot:xfer_slot + 11] = np.bincount(xbins,
                                                    minlength=11) / count

    slot = _FS_SLOT.get(meta.fs_tag)
    if slot is not None:
        out[slot] = 1.0
    return out


def extract_epoch(events, meta: TraceMeta) -> FeatureVector:
    """Batch extraction of one epoch's events (timestamp order assumed)."""
    arr = _as_event_array(events)
    return FeatureVector(values=compute_features(arr, meta),
                         scenario_tag=meta.scenario_tag)


class EpochAccumulator:
    """Streaming epoch state: push events in timestamp order, finalize once.

    Events are buffered column-wise; `finalize` runs the shared vectorized
    extraction, so the result is identical to `extract_epoch` on the same
    events. Accepts both single events and pre-built structured chunks.
    """

    __slots__ = ("_chunks", "_scalars", "_last_ts", "_count")

    def __init__(self):
        self._chunks: list[np.ndarray] = []
        self._scalars: list[tuple] = []
        self._last_ts = -1
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def push(self, e: IoEvent) -> None:
        if e.timestamp_ns < self._last_ts:
            raise OutOfOrderEvent(
                f"timestamp {e.timestamp_ns} after {self._last_ts}")
        self._last_ts = e.timestamp_ns
        self._scalars.append(e.as_record())
        self._count += 1

    def push_batch(self, arr: np.ndarray) -> None:
        if len(arr) == 0:
            return
        ts = arr["timestamp_ns"]
        if int(ts[0]) < self._last_ts:
            raise OutOfOrderEvent(
                f"timestamp {int(ts[0])} after {self._last_ts}")
        if len(arr) > 1 and (ts[1:] < ts[:-1]).any():
            k = int(np.argmax(ts[1:] < ts[:-1]))
            raise OutOfOrderEvent(f"timestamp {int(ts[k + 1])} after "
                                  f"{int(ts[k])}")
        self._flush_scalars()
        self._chunks.append(arr)
        self._last_ts = int(ts[-1])
        self._count += len(arr)

    def _flush_scalars(self) -> None:
        if self._scalars:
            self._chunks.append(np.array(self._scalars, dtype=EVENT_DTYPE))
            self._scalars.clear()

    def as_array(self) -> np.ndarray:
        self._flush_scalars()
        if not self._chunks:
            return np.zeros(0, dtype=EVENT_DTYPE)
        if len(self._chunks) == 1:
            return self._chunks[0]
        return np.concatenate(self._chunks)

    def finalize(self, meta: TraceMeta) -> FeatureVector:
        return FeatureVector(values=compute_features(self.as_array(), meta),
                             scenario_tag=meta.scenario_tag)


def stream_push(acc: EpochAccumulator, e: IoEvent) -> None:
    acc.push(e)


def stream_finalize(acc: EpochAccumulator, meta: TraceMeta) -> FeatureVector:
    return acc.finalize(meta)


# --- whole-trace extraction --------------------------------------------------

def label_epoch(arr: np.ndarray, rule: LabelRule) -> str:
    """Recompute the label from per-event source attribution."""
    is_write = (arr["flags"] & 1) == 1
    length = arr["length_bytes"].astype(np.int64)
    total = int(length[is_write].sum())
    if total == 0:
        return "benign"
    rw = is_write & ((arr["flags"] >> 1) == SRC_RANSOMWARE)
    ransom = int(length[rw].sum())
    return "ransomware" if ransom >= rule.theta * total else "benign"


def epoch_slices(arr: np.ndarray, window_ns: int):
    """Yield (epoch_index, subarray) for each non-empty epoch in order."""
    if len(arr) == 0:
        return
    eids = arr["timestamp_ns"] // window_ns
    cuts = np.flatnonzero(eids[1:] != eids[:-1]) + 1
    bounds = np.concatenate(([0], cuts, [len(arr)]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield int(eids[a]), arr[a:b]


def extract_trace(trace: Trace, labeling: LabelRule = LabelRule(),
                  baseline: bool = False) -> list[FeatureVector]:
    """Partition the timeline into epoch windows anchored at t=0 and emit
    one labeled vector per non-empty epoch."""
    window_ns = trace.meta.epoch_window_ns
    out = []
    for eid, sub in epoch_slices(trace.arr, window_ns):
        values = (extract_baseline_values(sub, trace.meta) if baseline
                  else compute_features(sub, trace.meta))
        out.append(FeatureVector(
            values=values,
            label=label_epoch(sub, labeling),
            epoch_index=eid,
            scenario_tag=trace.meta.scenario_tag,
        ))
    return out


# --- prior-work baseline features --------------------------------------------

def extract_baseline_values(arr: np.ndarray, meta: TraceMeta) -> np.ndarray:
    """5-slot baseline: [mean write entropy, write tput, read tput,
    var(norm write LBA), var(norm read LBA)]; population variance."""
    out = np.zeros(N_BASELINE)
    is_write = (arr["flags"] & 1) == 1
    length = arr["length_bytes"].astype(np.int64)
    window_s = meta.epoch_window_s
    out[1] = int(length[is_write].sum()) / window_s
    out[2] = int(length[~is_write].sum()) / window_s
    pm_w = arr["entropy_pm"][is_write]
    out[0] = pm_w.astype(np.float64).mean() if len(pm_w) else -1.0
    norm = arr["lba"].astype(np.float64) / meta.total_sectors
    for sel, slot in ((is_write, 3), (~is_write, 4)):
        vals = norm[sel]
        out[slot] = vals.var() if len(vals) >= 2 else 0.0
    return out


def extract_baseline(events, meta: TraceMeta) -> np.ndarray:
    return extract_baseline_values(_as_event_array(events), meta)


def _as_event_array(events) -> np.ndarray:
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    ev = list(events)
    arr = np.zeros(len(ev), dtype=EVENT_DTYPE)
    for i, e in enumerate(ev):
        arr[i] = e.as_record()
    return arr


# --- feature matrix CSV -------------------------------------------------------

def write_features_csv(vectors: list[FeatureVector], fp) -> None:
    """Feature matrix CSV: f00..fNN value columns, then label, epoch_index,
    scenario_tag. Header row mandatory."""
    if not vectors:
        raise ValueError("no vectors to write")
    width = len(vectors[0].values)
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow([f"f{i:02d}" for i in range(width)]
                    + ["label", "epoch_index", "scenario_tag"])
    for v in vectors:
        writer.writerow([repr(float(x)) for x in v.values]
                        + [v.label or "", v.epoch_index, v.scenario_tag])


def read_features_csv(fp) -> list[FeatureVector]:
    reader = csv.reader(fp)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, 0, "empty feature file") from None
    if header[-3:] != ["label", "epoch_index", "scenario_tag"]:
        raise ParseError(1, max(len(header) - 3, 0),
                         "trailing columns must be label,epoch_index,"
                         "scenario_tag")
    width = len(header) - 3
    expected = [f"f{i:02d}" for i in range(width)]
    if header[:width] != expected:
        raise ParseError(1, 0, "value columns must be f00..f{:02d}".format(
            width - 1))
    out = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != width + 3:
            raise ParseError(lineno, len(row) - 1,
                             f"expected {width + 3} fields")
        try:
            values = np.array([float(x) for x in row[:width]])
        except ValueError:
            bad = next(i for i, x in enumerate(row[:width])
                       if not _is_float(x))
            raise ParseError(lineno, bad, f"bad number {row[bad]!r}") \
                from None
        try:
            epoch_index = int(row[width + 1])
        except ValueError:
            raise ParseError(lineno, width + 1,
                             f"bad epoch index {row[width + 1]!r}") from None
        out.append(FeatureVector(values=values, label=row[width] or None,
                                 epoch_index=epoch_index,
                                 scenario_tag=row[width + 2]))
    return out


def _is_float(x: str) -> bool:
    try:
        float(x)
        return True
    except ValueError:
        return False
