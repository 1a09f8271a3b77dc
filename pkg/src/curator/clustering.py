"""Pseudo-task clustering: seeded k-means over gradient vectors with
WSS-based choice of k.

Everything is pinned for reproducibility: k-means++ initialization draws
from PCG64(seed), nearest-centroid ties go to the lowest centroid index,
empty clusters are repaired by moving the globally farthest point, and the
per-k runs of the grid search derive their seeds as seed XOR k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import derive_seed, xor_seed

logger = logging.getLogger(__name__)

DEFAULT_K_GRID = tuple(range(5, 51, 5))
MAX_ITER = 300


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    wss: float
    seed: int
    iterations_run: int

    @property
    def assignments(self) -> dict[str, int]:
        return {sid: int(c) for sid, c in zip(self.ids, self.labels)}

    def member_rows(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == c) for c in range(self.k)]


def _squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """All-pairs squared L2 distances, clipped at 0 against rounding."""
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centroids.T)
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centers[c] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))
    return centers


def kmeans(
    vectors: np.ndarray,
    k: int,
    seed: int,
    ids: Sequence[str] | None = None,
    n_restarts: int = 8,
) -> ClusterModel:
    """Seeded k-means: best of n_restarts k-means++ inits by final WSS.

    Restart seeds derive from the given seed, so the result is a pure
    function of (vectors, k, seed); ties keep the earliest restart.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected an (n, d) matrix")
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"n={n} < k={k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input vectors")
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    if ids is None:
        ids = tuple(str(i) for i in range(n))
    else:
        ids = tuple(ids)
        if len(ids) != n:
            raise ValueError("ids length must match vectors")

    best: ClusterModel | None = None
    for restart in range(n_restarts):
        model = _kmeans_once(x, k, derive_seed(seed, "restart", restart), ids, seed)
        if best is None or model.wss < best.wss:
            best = model
    return best


def _kmeans_once(x: np.ndarray, k: int, init_seed: int, ids: tuple[str, ...], seed: int) -> ClusterModel:
    """One Lloyd run: k-means++ init, at most 300 iterations, empty clusters
    repaired by moving the point farthest from its assigned centroid."""
    n = x.shape[0]
    rng = np.random.Generator(np.random.PCG64(init_seed & ((1 << 64) - 1)))
    centroids = _kmeans_pp_init(x, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        d2 = _squared_distances(x, centroids)
        new_labels = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties

        # Empty-cluster repair: hand each empty cluster the globally
        # farthest point (ties -> lowest row), one at a time.
        counts = np.bincount(new_labels, minlength=k)
        repaired = False
        for empty in np.flatnonzero(counts == 0):
            dist_to_own = d2[np.arange(n), new_labels]
            movable = counts[new_labels] > 1  # don't empty another cluster
            if not np.any(movable):
                break
            masked = np.where(movable, dist_to_own, -np.inf)
            farthest = int(np.argmax(masked))
            counts[new_labels[farthest]] -= 1
            new_labels[farthest] = empty
            counts[empty] += 1
            centroids[empty] = x[farthest]
            d2[:, empty] = np.sum((x - centroids[empty]) ** 2, axis=1)
            repaired = True

        if not repaired and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        # Ordered reduction keeps the update independent of BLAS threading.
        sums = np.zeros((k, x.shape[1]), dtype=np.float64)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        centroids = sums / np.maximum(counts, 1.0)[:, None]

    wss = float(np.sum((x - centroids[labels]) ** 2))
    return ClusterModel(
        k=k,
        centroids=centroids,
        labels=labels,
        ids=ids,
        wss=wss,
        seed=seed,
        iterations_run=iterations,
    )


def pick_elbow(grid: Sequence[int], wss_values: Sequence[float], threshold: float = 0.05) -> int:
    """Pick the smallest grid k whose relative WSS improvement to the next
    grid value drops below the threshold; fall back to argmin WSS."""
    grid = list(grid)
    wss_values = list(wss_values)
    if len(grid) != len(wss_values) or not grid:
        raise ValueError("grid and wss_values must be non-empty and aligned")
    if len(grid) == 1:
        return grid[0]
    for i in range(len(grid) - 1):
        if wss_values[i] <= 0.0:
            return grid[i]
        improvement = (wss_values[i] - wss_values[i + 1]) / wss_values[i]
        if improvement < threshold:
            return grid[i]
    return grid[int(np.argmin(wss_values))]


@dataclass(frozen=True)
class SelectKResult:
    k_best: int
    model: ClusterModel
    grid: tuple[int, ...]
    wss_per_k: tuple[float, ...]
    monotone: bool


def select_k(
    vectors: np.ndarray,
    grid: Sequence[int] = DEFAULT_K_GRID,
    seed: int = 0,
    ids: Sequence[str] | None = None,
) -> SelectKResult:
    """Grid-search k by WSS and return the chosen model.

    Each k runs with its own derived seed (seed XOR k). A non-monotone WSS
    curve (possible with local k-means optima) is kept but logged.
    """
    grid = tuple(sorted(set(int(g) for g in grid)))
    if not grid:
        raise ValueError("grid must be non-empty")
    n = np.asarray(vectors).shape[0]
    if grid[-1] > n:
        raise ValueError(f"max grid value {grid[-1]} exceeds n={n}")

    models = {k: kmeans(vectors, k, xor_seed(seed, k), ids=ids) for k in grid}
    wss_values = tuple(models[k].wss for k in grid)
    monotone = all(wss_values[i + 1] <= wss_values[i] + 1e-9 for i in range(len(grid) - 1))
    if not monotone:
        logger.warning("WSS non-monotone over grid %s: %s", grid, wss_values)
    k_best = pick_elbow(grid, wss_values)
    return SelectKResult(k_best=k_best, model=models[k_best], grid=grid, wss_per_k=wss_values, monotone=monotone)
