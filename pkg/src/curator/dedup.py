"""Permanent pool compression: within each cluster, drop the samples with
the highest nearest-neighbor cosine in semantic-embedding space until the
pool fits the budget.

Similarity is computed on semantic vectors, not gradients: hidden-state
embeddings carry the semantic redundancy signal while gradients carry the
skill signal. Clusters above their waterfilled share are pruned
largest-first; within a max-similarity pair the higher sample_id is the
one dropped, so one copy of every duplicate group always survives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import parallel_map
from .datamodel import DataPool
from .selection import allocate_budgets

NEIGHBOR_CAP = 20000  # above this, neighbors are searched in a strided subsample


@dataclass(frozen=True)
class CompressionPlan:
    pool_budget: int
    removals: tuple[str, ...]
    per_cluster_target: tuple[int, ...]


def _nearest_neighbors(embeddings: np.ndarray, ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Per row: (max cosine to another member, partner row; ties -> lowest id).

    Exact O(n^2) up to NEIGHBOR_CAP rows; beyond that each row is compared
    against an evenly strided subsample of the cluster (documented
    approximation for oversized clusters).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two embeddings")
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"zero-norm embedding for sample {ids[int(zero[0])]!r}")
    unit = x / norms[:, None]

    if n > NEIGHBOR_CAP:
        stride = n / NEIGHBOR_CAP
        candidates = np.floor(np.arange(NEIGHBOR_CAP) * stride).astype(np.int64)
    else:
        candidates = np.arange(n, dtype=np.int64)

    id_rank = np.empty(n, dtype=np.int64)
    for rank, pos in enumerate(sorted(range(n), key=lambda i: ids[i])):
        id_rank[pos] = rank

    max_cos = np.empty(n, dtype=np.float64)
    partner = np.empty(n, dtype=np.int64)
    cand_unit = unit[candidates]
    block = 2048
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = unit[start:stop] @ cand_unit.T
        for local, row in enumerate(range(start, stop)):
            self_pos = np.flatnonzero(candidates == row)
            row_sims = sims[local]
            if self_pos.size:
                row_sims = row_sims.copy()
                row_sims[self_pos[0]] = -np.inf
            best = float(np.max(row_sims))
            tied = candidates[np.flatnonzero(row_sims >= best)]
            max_cos[row] = best
            partner[row] = tied[np.argmin(id_rank[tied])]
    return max_cos, partner


def redundancy_rank(embeddings: np.ndarray, ids: Sequence[str] | None = None) -> list[tuple[str, float]]:
    """(sample_id, nearest-other cosine) pairs, most redundant first."""
    n = np.asarray(embeddings).shape[0]
    if ids is None:
        ids = [str(i) for i in range(n)]
    max_cos, _ = _nearest_neighbors(embeddings, ids)
    order = sorted(range(n), key=lambda i: (-max_cos[i], ids[i]))
    return [(ids[i], float(max_cos[i])) for i in order]


def prune_cluster(embeddings: np.ndarray, m: int, ids: Sequence[str] | None = None) -> set[str]:
    """Remove exactly m samples, most-redundant first.

    Each pass walks the redundancy ranking and skips a candidate whose
    max-cosine partner already fell in the same pass, which keeps one copy
    of every duplicate group alive. Among equal-similarity pairs the higher
    sample_id goes first. Passes repeat over the survivors until m are gone.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if ids is None:
        ids = [str(i) for i in range(n)]
    if m >= n:
        raise ValueError(f"cannot remove {m} of {n} samples")
    if m <= 0:
        return set()

    removed: set[int] = set()
    alive = np.arange(n, dtype=np.int64)
    while len(removed) < m:
        sub_ids = [ids[i] for i in alive]
        max_cos, partner = _nearest_neighbors(x[alive], sub_ids)
        # descending cosine; ties by descending id (stable two-pass sort)
        order = sorted(range(len(alive)), key=lambda i: sub_ids[i], reverse=True)
        order = sorted(order, key=lambda i: -max_cos[i])
        removed_this_pass: set[int] = set()
        for local in order:
            if len(removed) >= m:
                break
            if int(partner[local]) in removed_this_pass:
                continue
            removed_this_pass.add(local)
            removed.add(int(alive[local]))
        alive = np.asarray([i for i in alive if i not in removed], dtype=np.int64)
    return {ids[i] for i in removed}


def compress_pool(pool: DataPool, cluster_model=None, pool_budget: int = 0) -> tuple[DataPool, CompressionPlan]:
    """Shrink the pool to the budget by pruning oversized clusters.

    Targets come from the same waterfill as budget allocation, so slack from
    clusters already below a uniform share rolls up to the larger ones; the
    final size is exactly min(budget, pool size). Idempotent. Assignments
    come from the pool; a cluster model, when given, is checked against it.
    """
    if pool.cluster_of is None:
        raise ValueError("pool must be clustered before compression")
    k = pool.k
    if cluster_model is not None and cluster_model.k != k:
        raise ValueError(f"cluster model k={cluster_model.k} does not match pool k={k}")
    if pool_budget < k:
        raise ValueError(f"pool budget {pool_budget} < k={k}")

    members = pool.cluster_members()
    sizes = [int(rows.size) for rows in members]
    targets = allocate_budgets(sizes, pool_budget, mode="uniform").per_cluster

    order = sorted(range(k), key=lambda c: (-sizes[c], c))  # largest first
    to_prune = [c for c in order if sizes[c] > targets[c]]
    semantic = pool.semantic_matrix()
    ids = pool.sample_ids

    def prune(cluster_id: int) -> list[str]:
        rows = members[cluster_id]
        cluster_ids = [ids[r] for r in rows]
        removed = prune_cluster(semantic[rows], sizes[cluster_id] - targets[cluster_id], ids=cluster_ids)
        return sorted(removed)

    removed_per_cluster = parallel_map(prune, to_prune)
    removals: list[str] = []
    for batch in removed_per_cluster:
        removals.extend(batch)
    removed_set = set(removals)

    survivors = tuple(s for s in pool.samples if s.sample_id not in removed_set)
    assignments = {s.sample_id: pool.cluster_of[s.sample_id] for s in survivors}
    new_pool = DataPool(samples=survivors, timestep=pool.timestep, cluster_of=assignments, k=k)
    plan = CompressionPlan(pool_budget=pool_budget, removals=tuple(removals), per_cluster_target=tuple(targets))
    return new_pool, plan
