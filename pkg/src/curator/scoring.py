"""The four per-sample importance scores, the per-cluster score table, and
the optional on-disk score dump.

Perplexity is exp of the mean per-token NLL (nats). The image-grounding
score divides text-only perplexity by with-image perplexity, so values
above 1 mark samples whose answers get likelier once the image is seen.
EL2N and output entropy arrive as precomputed per-sample scalars in the
bundle; the per-token primitives live here for extractors and tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._util import write_json
from .datamodel import DataPool, SampleRecord, SelectorRegistry
from .selection import HistogramSpec, trim_outliers


def perplexity(nll_seq: Sequence[float]) -> float:
    """exp(mean NLL) over a non-empty sequence of per-token NLLs."""
    nll = np.asarray(nll_seq, dtype=np.float64)
    if nll.size == 0:
        raise ValueError("empty NLL sequence")
    if not np.all(np.isfinite(nll)) or np.any(nll < 0):
        raise ValueError("NLL values must be finite and >= 0")
    return float(np.exp(np.mean(nll)))


def image_grounding(nll_text_only: Sequence[float], nll_with_image: Sequence[float]) -> float:
    """Ratio of text-only to with-image perplexity over the same answer span."""
    if len(nll_text_only) != len(nll_with_image):
        raise ValueError(f"NLL length mismatch: {len(nll_text_only)} vs {len(nll_with_image)}")
    return perplexity(nll_text_only) / perplexity(nll_with_image)


def _check_prob_vec(prob_vec: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(prob_vec, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be non-empty and 1-d")
    if np.any(p < 0):
        raise ValueError("negative probability")
    total = float(np.sum(p))
    if abs(total - 1.0) > tol:
        raise ValueError(f"probabilities sum to {total}, beyond tolerance {tol}")
    return p


def el2n(prob_vec: Sequence[float], target_index: int) -> float:
    """L2 norm of the output error vector against the one-hot target."""
    p = _check_prob_vec(prob_vec)
    if not 0 <= target_index < p.size:
        raise ValueError(f"target index {target_index} out of range for {p.size} classes")
    err = p.copy()
    err[target_index] -= 1.0
    return float(np.linalg.norm(err))


def output_entropy(prob_vec: Sequence[float]) -> float:
    """-sum(p ln p) with 0 * ln 0 := 0."""
    p = _check_prob_vec(prob_vec)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


# Scorers consume a SampleRecord and return the raw score. EL2N and entropy
# were already reduced to per-sample scalars by the extractor.
_SCORERS: dict[str, Callable[[SampleRecord], float]] = {
    "perplexity": lambda s: perplexity(s.nll_with_image),
    "image_grounding": lambda s: image_grounding(s.nll_text_only, s.nll_with_image),
    "el2n": lambda s: s.el2n_raw,
    "entropy": lambda s: s.entropy_raw,
}


def register_scorer(function_id: str, fn: Callable[[SampleRecord], float]) -> None:
    """Add a scoring function to the dispatch table (registry stays caller-owned)."""
    if function_id in _SCORERS:
        raise ValueError(f"scorer {function_id!r} already registered")
    _SCORERS[function_id] = fn


@dataclass(frozen=True)
class ScoreTable:
    """Raw and per-cluster min-max-normalized scores, one column per function."""

    function_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    raw: np.ndarray
    normalized: np.ndarray

    def column(self, function_id: str) -> np.ndarray:
        return self.raw[:, self.function_ids.index(function_id)]


def dump_scores(table: ScoreTable, out_dir, prefix: str = "scores") -> Path:
    """Write the raw score matrix as little-endian float32 plus a manifest
    naming its columns."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.raw.astype("<f4").tofile(out_dir / f"{prefix}.f32")
    write_json(
        out_dir / f"{prefix}_manifest.json",
        {
            "columns": list(table.function_ids),
            "n_samples": len(table.sample_ids),
            "dtype": "float32-le",
            "layout": "row-major",
        },
    )
    return out_dir / f"{prefix}.f32"


def build_score_table(
    pool: DataPool,
    registry: SelectorRegistry | None = None,
    hist: HistogramSpec | None = None,
) -> ScoreTable:
    """Score every pool sample with every registered function.

    Normalization is min-max per (cluster, function) over the non-trimmed
    members, clipped to [0, 1] for the trimmed ones; a constant column
    normalizes to all-0.5 so downstream binning stays defined. An
    unclustered pool is treated as a single cluster.
    """
    registry = registry or SelectorRegistry()
    hist = hist or HistogramSpec()
    for fn_id in registry.function_ids:
        if fn_id not in _SCORERS:
            raise ValueError(f"unknown scoring function {fn_id!r}")

    n = len(pool)
    raw = np.zeros((n, len(registry.function_ids)), dtype=np.float64)
    for j, fn_id in enumerate(registry.function_ids):
        scorer = _SCORERS[fn_id]
        raw[:, j] = [scorer(s) for s in pool.samples]
    if not np.all(np.isfinite(raw)):
        bad = np.argwhere(~np.isfinite(raw))[0]
        raise ValueError(f"non-finite raw score: sample {pool.samples[bad[0]].sample_id!r}, function {registry.function_ids[bad[1]]!r}")

    if pool.cluster_of is not None:
        members = pool.cluster_members()
    else:
        members = [np.arange(n, dtype=np.int64)]

    ids = pool.sample_ids
    normalized = np.zeros_like(raw)
    for rows in members:
        if rows.size == 0:
            continue
        cluster_ids = [ids[r] for r in rows]
        for j in range(raw.shape[1]):
            col = raw[rows, j]
            kept = trim_outliers(col, hist.trim_fraction, ids=cluster_ids)
            lo, hi = float(np.min(col[kept])), float(np.max(col[kept]))
            if hi > lo:
                normalized[rows, j] = np.clip((col - lo) / (hi - lo), 0.0, 1.0)
            else:
                normalized[rows, j] = 0.5
    return ScoreTable(registry.function_ids, ids, raw, normalized)
