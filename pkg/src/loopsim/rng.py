"""Counter-based random streams.

Every uniform draw is a pure function of ``(seed, stream key, counter)``, so
a trial's randomness does not depend on which other trials run, in what
order, or on how many threads. Draws can be addressed directly by counter,
which lets the scalar and vectorized simulation paths consume identical
numbers.

The mixing function is the SplitMix64 finalizer.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TO_UNIT = 2.0 ** -53

MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def derive_seed(master_seed: int, *path) -> int:
    """Derive an independent 64-bit seed from ``master_seed`` and a key path.

    Used for sweep points, power-analysis replicates and similar sub-runs.
    """
    text = ":".join([str(int(master_seed) & MASK64), *map(str, path)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def stream_keys(seed: int, indices) -> np.ndarray:
    """Per-stream 64-bit keys for stream ``indices`` under ``seed``."""
    idx = np.asarray(indices, dtype=np.uint64)
    base = _mix(np.array([int(seed) & MASK64], dtype=np.uint64))
    with np.errstate(over="ignore"):
        return _mix(base ^ _mix(idx * _GOLDEN + _GOLDEN))


def uniforms(keys: np.ndarray, counters) -> np.ndarray:
    """Uniform [0, 1) draws for stream ``keys`` at ``counters`` (broadcast)."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(np.asarray(keys, dtype=np.uint64) + (c + np.uint64(1)) * _GOLDEN)
    return (z >> _S11).astype(np.float64) * _TO_UNIT


class RandomStream:
    """A single reproducible stream identified by ``(seed, index)``.

    ``random`` consumes counters sequentially; ``at`` reads addressed counters
    without moving the cursor.
    """

    def __init__(self, seed: int, index: int = 0):
        self.seed = int(seed) & MASK64
        self.index = int(index)
        self._key = stream_keys(self.seed, [self.index])[0]
        self._cursor = 0

    def at(self, counters) -> np.ndarray:
        return uniforms(self._key, counters)

    def random(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = uniforms(self._key, np.arange(self._cursor, self._cursor + n, dtype=np.uint64))
        self._cursor += n
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, index={self.index})"
