"""Reproducible random streams and an order-preserving parallel map.

Replicate ``r`` of any Monte Carlo or bootstrap loop draws from a Philox
(counter-based) generator keyed by ``(seed, stream, r)`` only, so results do
not depend on how replicates are scheduled across workers.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.special import ndtri

_TWO53 = float(2**53)


def _stream_code(stream: str) -> int:
    return zlib.crc32(stream.encode("utf-8"))


def replicate_rng(seed: int, index: int, stream: str = "main") -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _stream_code(stream), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1) with 53-bit resolution."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) / _TWO53


def std_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normals by inverse CDF."""
    return ndtri(open_uniform(rng, size))


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads == 1:
        return 1
    if threads <= 0:
        return os.cpu_count() or 1
    return int(threads)


def chunked(seq, parts):
    seq = list(seq)
    parts = max(1, min(parts, len(seq)))
    size, extra = divmod(len(seq), parts)
    out, start = [], 0
    for i in range(parts):
        stop = start + size + (1 if i < extra else 0)
        out.append(seq[start:stop])
        start = stop
    return out


def parallel_map(fn, items, threads: int | None = 1):
    """``[fn(item) for item in items]``, optionally across worker processes.

    Output order always follows input order.
    """
    items = list(items)
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
