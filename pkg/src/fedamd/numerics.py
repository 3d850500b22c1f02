"""Vector algebra and reproducible random streams.

Parameter vectors are plain 1-D ``float64`` numpy arrays. Every reduction
over a set of clients goes through :func:`ordered_mean` so that the
summation order is always ascending client id, which keeps trajectories
bit-identical between runs and independent of thread scheduling.

Random draws come from :func:`stream`, which hashes a
``(seed, round, client, purpose)`` tuple into a Philox key. Philox is a
counter-based generator, so two streams never share state and the draw
sequence of a task does not depend on which thread executes it.
"""

from __future__ import annotations

import enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

MASK64 = (1 << 64) - 1
SERVER = -1  # client sentinel for server-side draws


class Purpose(enum.IntEnum):
    CLIENT_SELECTION = 1
    GROUP_CLASSIFICATION = 2
    BATCH_SAMPLING = 3
    DATA_GENERATION = 4
    CACHE_INIT = 5


def as_param(x: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1)


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``alpha * x + y`` as a new vector."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"axpy: length mismatch {x.shape} vs {y.shape}")
    return alpha * x + y


def l2_norm_sq(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return float(np.dot(x, x))


def ordered_sum(vectors: Iterable[np.ndarray]) -> np.ndarray:
    """Left-to-right sum; the caller supplies vectors in ascending id order."""
    total = None
    for v in vectors:
        if total is None:
            total = np.array(v, dtype=np.float64, copy=True)
        else:
            if v.shape != total.shape:
                raise DimensionError(f"sum: length mismatch {v.shape} vs {total.shape}")
            total += v
    if total is None:
        raise ValueError("ordered_sum of an empty sequence")
    return total


def ordered_mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    return ordered_sum(vectors) / len(vectors)


def all_finite(x: np.ndarray) -> bool:
    return bool(np.isfinite(x).all())


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit avalanche hash."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, round: int, client: int, purpose: Purpose | int) -> tuple[int, int]:
    """Hash the stream tuple into a 128-bit Philox key."""
    words = (seed & MASK64, round & MASK64, client & MASK64, int(purpose) & MASK64)
    h0 = 0x243F6A8885A308D3
    h1 = 0x13198A2E03707344
    for w in words:
        h0 = mix64(h0 ^ w)
        h1 = mix64(h1 ^ mix64(w ^ 0xA4093822299F31D0))
    return h0, h1


def stream(seed: int, round: int, client: int, purpose: Purpose | int) -> np.random.Generator:
    """Return a fresh generator for the given tuple.

    Equal tuples give equal draw sequences; ``client`` may be :data:`SERVER`.
    """
    if round < 0:
        raise ValueError(f"round must be >= 0, got {round}")
    key = np.array(stream_key(seed, round, client, purpose), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
