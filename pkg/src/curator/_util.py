"""Low-level helpers shared across modules: seeded hashing, canonical JSON,
file digests, and the worker-count knob."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Sequence, TypeVar

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def as_u64(seed: int) -> int:
    """Reduce an arbitrary Python int to its unsigned 64-bit value."""
    return seed & MASK64


def mix64(x: int) -> int:
    """splitmix64 finalizer on a single unsigned 64-bit value.

    This is the fixed mixing function behind every derived seed and the
    projection sign generator; it must never change, or stored seeds stop
    reproducing.
    """
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over a uint64 array."""
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def derive_seed(*parts: int | str) -> int:
    """Fold ints and string tags into one 64-bit seed, order-sensitive."""
    h = mix64(_GOLDEN)
    for part in parts:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            value = int.from_bytes(digest[:8], "little")
        else:
            value = as_u64(part)
        h = mix64((h + _GOLDEN) & MASK64 ^ value)
    return h


def xor_seed(seed: int, value: int) -> int:
    return (as_u64(seed) ^ as_u64(value)) & MASK64


def canonical_json(obj: Any) -> str:
    """Deterministic JSON encoding: sorted keys, tight separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path, obj: Any, indent: int = 2) -> None:
    """Write JSON with a fixed layout so repeated writes are byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=indent)
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def worker_count() -> int:
    """Parallelism cap: CURATOR_THREADS if set, else min(4, cpu_count)."""
    env = os.environ.get("CURATOR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Map fn over items, preserving order. Runs sequentially when the
    worker cap is 1, so results are identical either way."""
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
