"""Normalized Shannon entropy of byte buffers, per 4 KiB chunk.

Entropy is reported as an integer in per-mille of the 8-bit maximum
(0 = constant bytes, 1000 = uniform over all 256 values). Integer
per-mille keeps event records compact and makes results bit-identical
across platforms; log2 is evaluated in double precision and only the
final value is rounded (half away from zero).

All functions are pure and stateless.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyBuffer

CHUNK = 4096
MIN_TAIL = 512


class ByteHistogram:
    """Occurrence counts of the 256 byte values in a buffer."""

    __slots__ = ("counts", "total")

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.uint64)
        if self.counts.shape != (256,):
            raise ValueError("counts must have shape (256,)")
        self.total = int(self.counts.sum())


def byte_histogram(buffer) -> ByteHistogram:
    """Count byte-value occurrences in one pass. Empty buffers allowed."""
    data = np.frombuffer(bytes(buffer), dtype=np.uint8) \
        if not isinstance(buffer, np.ndarray) else buffer.astype(np.uint8,
                                                                 copy=False)
    return ByteHistogram(np.bincount(data, minlength=256))


def entropy_permille(h: ByteHistogram) -> int:
    """Normalized Shannon entropy of a histogram, in per-mille of 8 bits."""
    if h.total == 0:
        raise EmptyBuffer("histogram is empty")
    counts = h.counts.astype(np.float64)
    return _permille_from_counts(counts[None, :], float(h.total))[0]


def chunked_write_entropy(buffer, chunk: int = CHUNK) -> int:
    """Mean per-mille entropy over consecutive `chunk`-byte slices.

    A final partial slice shorter than 512 bytes is merged into the
    preceding chunk (tiny tails give high-variance entropy estimates);
    512 bytes and above it stands alone. A buffer shorter than one chunk
    is a single slice regardless of its size.
    """
    data = np.frombuffer(bytes(buffer), dtype=np.uint8) \
        if not isinstance(buffer, np.ndarray) else buffer.astype(np.uint8,
                                                                 copy=False)
    n = len(data)
    if n == 0:
        raise EmptyBuffer("cannot compute entropy of an empty buffer")

    n_full = n // chunk
    tail = n - n_full * chunk
    values: list[int] = []

    if n_full == 0:
        merged_start = 0          # whole buffer is one (short) slice
    elif tail == 0:
        merged_start = n
    elif tail >= MIN_TAIL:
        merged_start = n_full * chunk
    else:
        merged_start = (n_full - 1) * chunk
        n_full -= 1

    if n_full > 0:
        block = data[: n_full * chunk].reshape(n_full, chunk)
        values.extend(_entropies_of_rows(block))
    if merged_start < n:
        values.append(entropy_permille(byte_histogram(data[merged_start:])))

    return _round_half_away(sum(values) / len(values))


def _entropies_of_rows(block: np.ndarray) -> list[int]:
    """Per-row per-mille entropies of an (k, chunk) uint8 block."""
    k, width = block.shape
    offsets = (np.arange(k, dtype=np.intp) * 256)[:, None]
    flat = block.astype(np.intp) + offsets
    counts = np.bincount(flat.ravel(), minlength=k * 256).reshape(k, 256)
    return _permille_from_counts(counts.astype(np.float64), float(width))


def _permille_from_counts(counts: np.ndarray, total: float) -> list[int]:
    """Shared inner formula: rows of 256 counts -> per-mille integers.

    Zero counts contribute exactly 0.0 via log2(1); keeping one summation
    path for the single-histogram and chunked cases makes them agree to
    the last bit.
    """
    p = counts / total
    p_safe = np.where(counts > 0, p, 1.0)
    bits = -(p * np.log2(p_safe)).sum(axis=1)
    return [_round_half_away(1000.0 * b / 8.0) for b in bits]


def _round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero (x >= 0 here)."""
    return int(math.floor(x + 0.5))
