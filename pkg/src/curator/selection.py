"""Per-cluster multi-way selection: pick the scoring function whose score
distribution has the highest histogram entropy, split the budget across
clusters by iterative waterfill, and draw stratified (coverage) samples
over score bins.

All randomness flows from PCG64 generators seeded per cluster as
seed XOR cluster_id; every tie rule is pinned, so a (pool, seed, config)
triple always yields the same manifest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import as_u64, parallel_map, xor_seed
from .datamodel import DataPool, ManifestEntry, SelectionManifest, SelectorRegistry

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HistogramSpec:
    """Histogram used both for selector entropy and CCS strata."""

    n_bins: int = 50
    trim_fraction: float = 0.05
    trim_scope: str = "cluster"  # or "global"

    def __post_init__(self):
        if self.n_bins <= 0:
            raise ValueError("n_bins must be positive")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")
        if self.trim_scope not in ("cluster", "global"):
            raise ValueError("trim_scope must be 'cluster' or 'global'")

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins, "trim_fraction": self.trim_fraction, "trim_scope": self.trim_scope}

    @classmethod
    def from_dict(cls, d: dict) -> "HistogramSpec":
        return cls(**d)


@dataclass(frozen=True)
class BudgetPlan:
    total: int
    per_cluster: tuple[int, ...]
    mode: str


def _id_ranks(n: int, ids: Sequence[str] | None) -> np.ndarray:
    """Rank of each position under ascending sample_id (positions when absent)."""
    if ids is None:
        return np.arange(n, dtype=np.int64)
    order = sorted(range(n), key=lambda i: ids[i])
    ranks = np.empty(n, dtype=np.int64)
    for rank, pos in enumerate(order):
        ranks[pos] = rank
    return ranks


def trim_outliers(scores: Sequence[float], frac: float, ids: Sequence[str] | None = None) -> np.ndarray:
    """Drop the floor(frac*n) lowest and highest scores; return kept indices sorted.

    On ties straddling a cut, lower sample_ids stay in the kept set: the low
    cut removes tied high ids first, then the high cut does the same among
    the survivors.
    """
    if not 0.0 <= frac < 0.5:
        raise ValueError("frac must be in [0, 0.5)")
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    q = int(np.floor(frac * n))
    if q == 0:
        return np.arange(n, dtype=np.int64)
    ranks = _id_ranks(n, ids)
    low_order = np.lexsort((-ranks, scores))  # score asc, id desc
    dropped = set(int(i) for i in low_order[:q])
    survivors = np.asarray([i for i in range(n) if i not in dropped], dtype=np.int64)
    high_order = survivors[np.lexsort((-ranks[survivors], -scores[survivors]))]  # score desc, id desc
    dropped.update(int(i) for i in high_order[:q])
    return np.asarray([i for i in range(n) if i not in dropped], dtype=np.int64)


def _bin_indices(normalized: np.ndarray, n_bins: int) -> np.ndarray:
    idx = np.floor(normalized * n_bins).astype(np.int64)
    return np.clip(idx, 0, n_bins - 1)


def _normalize_kept(kept_scores: np.ndarray) -> np.ndarray | None:
    """Min-max to [0,1]; None when the kept scores are constant."""
    lo, hi = float(np.min(kept_scores)), float(np.max(kept_scores))
    if hi <= lo:
        return None
    return (kept_scores - lo) / (hi - lo)


def distribution_entropy(
    scores: Sequence[float],
    spec: HistogramSpec | None = None,
    ids: Sequence[str] | None = None,
    kept: np.ndarray | None = None,
) -> float:
    """Histogram entropy of the trimmed, min-max-normalized scores.

    Empty bins contribute nothing; constant kept scores and degenerate
    clusters (< 2 kept samples) give 0.
    """
    spec = spec or HistogramSpec()
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if kept is None:
        kept = trim_outliers(scores, spec.trim_fraction, ids=ids)
    if len(kept) < 2:
        return 0.0
    normalized = _normalize_kept(scores[kept])
    if normalized is None:
        return 0.0
    counts = np.bincount(_bin_indices(normalized, spec.n_bins), minlength=spec.n_bins)
    n_kept = len(kept)
    # fsum gives the correctly-rounded sum, so equal count multisets yield
    # bit-identical entropies and selector ties stay deterministic
    return -math.fsum(c / n_kept * math.log(c / n_kept) for c in counts if c)


def choose_selector(
    cluster_scores: np.ndarray,
    registry: SelectorRegistry | None = None,
    spec: HistogramSpec | None = None,
    ids: Sequence[str] | None = None,
) -> str:
    """Pick the scoring function with the most entropic score distribution.

    Ties break by registry order, so all-degenerate clusters fall back to
    the first registered function.
    """
    registry = registry or SelectorRegistry()
    spec = spec or HistogramSpec()
    cluster_scores = np.asarray(cluster_scores, dtype=np.float64)
    if cluster_scores.ndim != 2 or cluster_scores.shape[1] != len(registry.function_ids):
        raise ValueError("cluster_scores must be (n, n_functions)")
    if cluster_scores.shape[0] < 1:
        raise ValueError("cluster must have at least one sample")
    entropies = [distribution_entropy(cluster_scores[:, j], spec, ids=ids) for j in range(cluster_scores.shape[1])]
    best = int(np.argmax(entropies))  # argmax keeps the first (registry-order) maximum
    return registry.function_ids[best]


def allocate_budgets(
    cluster_sizes: Sequence[int],
    t_budget: int,
    mode: str = "uniform",
    weights: Sequence[float] | None = None,
) -> BudgetPlan:
    """Split the budget over clusters with capped waterfill redistribution.

    Uniform mode hands every cluster an equal share (integer remainders to
    the lowest-index clusters); clusters too small to absorb their share are
    capped at their size and the slack re-splits over the rest. Density mode
    makes the shares proportional to caller-supplied complexity weights.
    """
    sizes = [int(s) for s in cluster_sizes]
    if any(s < 0 for s in sizes):
        raise ValueError("cluster sizes must be non-negative")
    if t_budget < 0:
        raise ValueError("budget must be non-negative")
    if mode not in ("uniform", "density"):
        raise ValueError(f"unknown budget mode {mode!r}")
    if mode == "density":
        if weights is None or len(weights) != len(sizes):
            raise ValueError("density mode needs one positive weight per cluster")
        weights = [float(w) for w in weights]
        if any(w <= 0 for w in weights):
            raise ValueError("density weights must be positive")

    alloc = [0] * len(sizes)
    active = [i for i in range(len(sizes)) if sizes[i] > 0]
    remaining = min(t_budget, sum(sizes))
    while remaining > 0 and active:
        if mode == "uniform":
            base, rem = divmod(remaining, len(active))
            shares = {i: base + (1 if r < rem else 0) for r, i in enumerate(active)}
        else:
            total_w = sum(weights[i] for i in active)
            shares = {i: int(remaining * weights[i] / total_w) for i in active}
            leftover = remaining - sum(shares.values())
            for i in active:
                if leftover <= 0:
                    break
                shares[i] += 1
                leftover -= 1
        capped = [i for i in active if sizes[i] <= shares[i]]
        if capped:
            for i in capped:
                alloc[i] = sizes[i]
                remaining -= sizes[i]
            active = [i for i in active if i not in set(capped)]
        else:
            for i in active:
                alloc[i] = shares[i]
            remaining = 0
    return BudgetPlan(total=t_budget, per_cluster=tuple(alloc), mode=mode)


def density_weights(semantic: np.ndarray, member_rows: Sequence[np.ndarray], subsample: int = 256) -> list[float]:
    """Cluster-complexity weights: inverse mean pairwise cosine over an
    evenly strided subsample of at most 256 members."""
    weights = []
    for rows in member_rows:
        if rows.size < 2:
            weights.append(1.0)
            continue
        if rows.size > subsample:
            stride = rows.size / subsample
            rows = rows[np.floor(np.arange(subsample) * stride).astype(np.int64)]
        vecs = semantic[rows].astype(np.float64)
        norms = np.linalg.norm(vecs, axis=1)
        norms[norms == 0] = 1.0
        unit = vecs / norms[:, None]
        sims = unit @ unit.T
        m = rows.size
        mean_cos = float((np.sum(sims) - m) / (m * (m - 1)))
        weights.append(1.0 / max(mean_cos, 1e-3))
    return weights


def ccs_sample(
    scores: Sequence[float],
    kept: Sequence[int],
    budget: int,
    spec: HistogramSpec | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Coverage sampling over score bins: sparse bins fill first.

    Bins are processed ascending by occupancy (ties by bin index); each gets
    min(|bin|, its share of the remaining budget) with integer remainders
    biased toward the earliest-processed bins, and members are drawn
    uniformly from PCG64(seed). Returns exactly `budget` indices, sorted.
    """
    spec = spec or HistogramSpec()
    scores = np.asarray(scores, dtype=np.float64)
    kept = np.asarray(sorted(int(i) for i in kept), dtype=np.int64)
    if budget < 0 or budget > kept.size:
        raise ValueError(f"budget {budget} out of range for {kept.size} kept samples")
    if budget == 0:
        return np.zeros(0, dtype=np.int64)
    if budget == kept.size:
        return kept.copy()

    normalized = _normalize_kept(scores[kept])
    if normalized is None:
        bins = [kept]
    else:
        bin_idx = _bin_indices(normalized, spec.n_bins)
        bins = [kept[bin_idx == b] for b in range(spec.n_bins)]
    order = sorted(range(len(bins)), key=lambda b: (len(bins[b]), b))

    rng = np.random.Generator(np.random.PCG64(as_u64(seed)))
    selected: list[np.ndarray] = []
    remaining = budget
    for pos, b in enumerate(order):
        members = bins[b]
        n_left = len(order) - pos
        share, rem = divmod(remaining, n_left)
        quota = min(len(members), share + (1 if rem else 0))
        if quota > 0:
            take = rng.choice(members, size=quota, replace=False) if quota < len(members) else members
            selected.append(np.sort(np.asarray(take, dtype=np.int64)))
            remaining -= quota
        if remaining == 0:
            break
    result = np.sort(np.concatenate(selected)) if selected else np.zeros(0, dtype=np.int64)
    if result.size != budget:
        raise AssertionError(f"CCS drew {result.size} != budget {budget}")
    return result


@dataclass(frozen=True)
class ClusterSelection:
    """Per-cluster bookkeeping surfaced in the manifest summary."""

    cluster_id: int
    size: int
    eligible: int
    selector_id: str
    entropies: dict[str, float]
    budget: int
    selected_rows: np.ndarray
    degenerate: bool


def select_subset(
    pool: DataPool,
    cluster_model,
    score_table,
    t_budget: int,
    spec: HistogramSpec | None = None,
    seed: int = 0,
    mode: str = "uniform",
    registry: SelectorRegistry | None = None,
    config_hash: str = "",
) -> SelectionManifest:
    """Per cluster: trim, choose the most entropic selector, then CCS-sample
    the cluster's waterfill share. Returns the manifest; per-cluster detail
    is available via select_subset_detailed."""
    manifest, _ = select_subset_detailed(
        pool, cluster_model, score_table, t_budget, spec, seed, mode, registry, config_hash
    )
    return manifest


def select_subset_detailed(
    pool: DataPool,
    cluster_model,
    score_table,
    t_budget: int,
    spec: HistogramSpec | None = None,
    seed: int = 0,
    mode: str = "uniform",
    registry: SelectorRegistry | None = None,
    config_hash: str = "",
) -> tuple[SelectionManifest, list[ClusterSelection]]:
    spec = spec or HistogramSpec()
    registry = registry or SelectorRegistry()
    if pool.cluster_of is None:
        raise ValueError("pool must be clustered before selection")
    if tuple(score_table.sample_ids) != pool.sample_ids:
        raise ValueError("score table rows do not match pool order")
    if t_budget < 0:
        raise ValueError("budget must be non-negative")

    ids = pool.sample_ids
    members = pool.cluster_members()
    fn_index = {fn: j for j, fn in enumerate(score_table.function_ids)}
    for fn in registry.function_ids:
        if fn not in fn_index:
            raise ValueError(f"score table lacks function {fn!r}")

    global_kept: dict[str, np.ndarray] | None = None
    if spec.trim_scope == "global":
        global_kept = {}
        for fn in registry.function_ids:
            col = score_table.raw[:, fn_index[fn]]
            global_kept[fn] = np.asarray(trim_outliers(col, spec.trim_fraction, ids=ids), dtype=np.int64)

    def analyze(cluster_id: int) -> tuple[str, dict[str, float], np.ndarray, bool]:
        rows = members[cluster_id]
        cluster_ids = [ids[r] for r in rows]
        kept_by_fn: dict[str, np.ndarray] = {}
        entropies: dict[str, float] = {}
        for fn in registry.function_ids:
            col = score_table.raw[rows, fn_index[fn]]
            if global_kept is not None:
                keep_set = set(global_kept[fn].tolist())
                kept = np.asarray([i for i, r in enumerate(rows) if int(r) in keep_set], dtype=np.int64)
            else:
                kept = trim_outliers(col, spec.trim_fraction, ids=cluster_ids)
            kept_by_fn[fn] = kept
            entropies[fn] = distribution_entropy(col, spec, kept=kept)
        values = [entropies[fn] for fn in registry.function_ids]
        chosen = registry.function_ids[int(np.argmax(values))]
        degenerate = len(kept_by_fn[chosen]) < 2
        return chosen, entropies, kept_by_fn[chosen], degenerate

    analyses = parallel_map(analyze, list(range(len(members))))

    eligible_sizes = [len(a[2]) for a in analyses]
    weights = None
    if mode == "density":
        weights = density_weights(pool.semantic_matrix(), members)
    plan = allocate_budgets(eligible_sizes, t_budget, mode=mode, weights=weights)

    def draw(cluster_id: int) -> np.ndarray:
        chosen, _, kept, _ = analyses[cluster_id]
        rows = members[cluster_id]
        col = score_table.raw[rows, fn_index[chosen]]
        picked = ccs_sample(col, kept, plan.per_cluster[cluster_id], spec, seed=xor_seed(seed, cluster_id))
        return rows[picked]

    drawn = parallel_map(draw, list(range(len(members))))

    entries: list[ManifestEntry] = []
    details: list[ClusterSelection] = []
    for cluster_id, (chosen, entropies, kept, degenerate) in enumerate(analyses):
        rows_selected = drawn[cluster_id]
        col_norm = score_table.normalized[:, fn_index[chosen]]
        for row in rows_selected:
            entries.append(ManifestEntry(ids[row], cluster_id, chosen, float(col_norm[row])))
        details.append(
            ClusterSelection(
                cluster_id=cluster_id,
                size=len(members[cluster_id]),
                eligible=len(kept),
                selector_id=chosen,
                entropies=entropies,
                budget=plan.per_cluster[cluster_id],
                selected_rows=rows_selected,
                degenerate=degenerate,
            )
        )

    manifest = SelectionManifest(
        timestep=pool.timestep,
        budget=t_budget,
        entries=tuple(entries),
        seed=seed,
        config_hash=config_hash,
    )
    return manifest, details
