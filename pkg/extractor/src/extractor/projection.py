"""Seeded Rademacher projection, matching the engine's documented generator:
entry (row, col) of R is +-1/sqrt(output_dim) from the splitmix64 finalizer
of (seed, row << 32 ^ col)."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def _mix64_scalar(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def project_rows(vectors: np.ndarray, output_dim: int, seed: int, block_rows: int = 2048) -> np.ndarray:
    """Project (n, input_dim) rows to (n, output_dim) without materializing R."""
    vectors = np.asarray(vectors, dtype=np.float64)
    input_dim = vectors.shape[1]
    if output_dim > input_dim:
        raise ValueError("output_dim must not exceed input_dim")
    key = np.uint64(_mix64_scalar(seed & MASK64))
    cols = np.arange(output_dim, dtype=np.uint64)
    out = np.zeros((vectors.shape[0], output_dim), dtype=np.float64)
    for start in range(0, input_dim, block_rows):
        stop = min(start + block_rows, input_dim)
        rows = np.arange(start, stop, dtype=np.uint64)
        grid = (rows[:, None] << np.uint64(32)) ^ cols[None, :]
        h = _mix64(grid ^ key)
        signs = ((h >> np.uint64(63)).astype(np.int8) * 2 - 1).astype(np.float32)
        out += vectors[:, start:stop].astype(np.float32) @ signs
    return out / np.sqrt(output_dim)
