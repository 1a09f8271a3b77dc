"""Seeded random projection of raw gradient vectors to a fixed low dimension.

The projection matrix R has i.i.d. Rademacher entries +-1/sqrt(output_dim),
generated entry-wise from the splitmix64 finalizer of (seed, row, col). R is
never materialized in full: blocks of rows are generated on the fly, so a
65536 x 8192 projection never allocates the whole matrix. Because the
generator is a fixed counter-based hash, the same (seed, input_dim,
output_dim) always yields the same R on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import as_u64, mix64, mix64_array


@dataclass(frozen=True)
class ProjectionSpec:
    input_dim: int
    output_dim: int = 8192
    seed: int = 0
    family: str = "rademacher"

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.output_dim > self.input_dim:
            raise ValueError("output_dim must not exceed input_dim")
        if self.family != "rademacher":
            raise ValueError(f"unknown projection family: {self.family!r}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "seed": self.seed,
            "family": self.family,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionSpec":
        return cls(**d)


def _sign_block(key: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Rademacher signs for the (rows x cols) block of R, as float32 +-1."""
    grid = (rows[:, None].astype(np.uint64) << np.uint64(32)) ^ cols[None, :].astype(np.uint64)
    h = mix64_array(grid ^ np.uint64(key))
    return ((h >> np.uint64(63)).astype(np.int8) * 2 - 1).astype(np.float32)


def project_many(vectors: np.ndarray, spec: ProjectionSpec, block_rows: int = 1024) -> np.ndarray:
    """Project a batch of row vectors; returns an (n, output_dim) float64 array.

    All rows share one R, so sign blocks are generated once per batch.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("expected an (n, input_dim) matrix")
    if vectors.shape[1] != spec.input_dim:
        raise ValueError(f"vector dim {vectors.shape[1]} != spec input_dim {spec.input_dim}")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("non-finite input vector")

    key = mix64(as_u64(spec.seed))
    cols = np.arange(spec.output_dim, dtype=np.uint64)
    out = np.zeros((vectors.shape[0], spec.output_dim), dtype=np.float64)
    for start in range(0, spec.input_dim, block_rows):
        stop = min(start + block_rows, spec.input_dim)
        rows = np.arange(start, stop, dtype=np.uint64)
        signs = _sign_block(key, rows, cols)
        out += vectors[:, start:stop].astype(np.float32) @ signs
    out /= np.sqrt(spec.output_dim)
    return out


def project(vec: np.ndarray, spec: ProjectionSpec) -> np.ndarray:
    """Project a single vector: R @ vec with the seeded Rademacher R."""
    vec = np.asarray(vec)
    if vec.ndim != 1:
        raise ValueError("expected a 1-d vector")
    return project_many(vec[None, :], spec)[0]
