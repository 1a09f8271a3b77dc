"""Per-timestep orchestration: merge the incoming bundle, re-cluster the
pool on gradient vectors, score, select the training subset, emit the
manifest, and (in Lite mode) permanently compress the pool.

State is a directory of immutable version snapshots; a pointer file is
swapped atomically after a new snapshot is fully written, so an
interrupted advance leaves the previous version intact. Re-clustering
happens from scratch each timestep: sample representations reflect the
model state that produced them, so carrying centroids forward would bake
in stale structure.

Stage seeds derive from the run seed via the fixed splitmix64 fold:
derive_seed(seed, timestep, "cluster") and derive_seed(seed, timestep,
"select"); within the stages, per-k and per-cluster seeds are XOR-derived
as documented in the clustering and selection modules.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock, Timeout

from ._util import canonical_json, derive_seed, sha256_file, write_json
from .clustering import DEFAULT_K_GRID, SelectKResult, select_k
from .datamodel import (
    BundleError,
    DataPool,
    SampleRecord,
    SelectionManifest,
    SelectorRegistry,
    StateConflictError,
    merge_pool,
    read_bundle,
    validate_bundle,
    write_bundle,
)
from .dedup import CompressionPlan, compress_pool
from .metrics import metrics_report, read_performance_csv, skill_upper_bounds
from .projection import ProjectionSpec, project_many
from .scoring import build_score_table, dump_scores
from .selection import ClusterSelection, HistogramSpec, select_subset_detailed

logger = logging.getLogger(__name__)

STATE_FORMAT = 1
POOL_DATASET_ID = "__pool__"


@dataclass(frozen=True)
class EngineConfig:
    """Everything one advance needs; defaults mirror the reference setup
    (k grid 5..50, 50 bins, 5% trim, projection dim 8192)."""

    t_budget: int = 25000
    pool_budget: int | None = None
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    histogram: HistogramSpec = field(default_factory=HistogramSpec)
    projection: ProjectionSpec | None = None
    budget_mode: str = "uniform"
    master_seed: int = 0
    registry: SelectorRegistry = field(default_factory=SelectorRegistry)
    dump_scores: bool = False

    def __post_init__(self):
        object.__setattr__(self, "k_grid", tuple(int(g) for g in self.k_grid))
        if self.t_budget <= 0:
            raise ValueError("t_budget must be positive")
        if self.pool_budget is not None and self.pool_budget <= 0:
            raise ValueError("pool_budget must be positive")
        if self.budget_mode not in ("uniform", "density"):
            raise ValueError(f"unknown budget mode {self.budget_mode!r}")

    def to_dict(self) -> dict:
        return {
            "t_budget": self.t_budget,
            "pool_budget": self.pool_budget,
            "k_grid": list(self.k_grid),
            "histogram": self.histogram.to_dict(),
            "projection": self.projection.to_dict() if self.projection else None,
            "budget_mode": self.budget_mode,
            "master_seed": self.master_seed,
            "registry": list(self.registry.function_ids),
            "dump_scores": self.dump_scores,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        return cls(
            t_budget=d["t_budget"],
            pool_budget=d.get("pool_budget"),
            k_grid=tuple(d["k_grid"]),
            histogram=HistogramSpec.from_dict(d["histogram"]),
            projection=ProjectionSpec.from_dict(d["projection"]) if d.get("projection") else None,
            budget_mode=d["budget_mode"],
            master_seed=d["master_seed"],
            registry=SelectorRegistry(tuple(d["registry"])),
            dump_scores=d.get("dump_scores", False),
        )

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()

    def structural_dict(self) -> dict:
        """The fields that must stay fixed over a pool's lifetime."""
        d = self.to_dict()
        for operational in ("t_budget", "pool_budget", "master_seed", "dump_scores"):
            d.pop(operational)
        return d


@dataclass(frozen=True)
class PoolState:
    version: int
    pool: DataPool
    k: int | None
    config: EngineConfig | None


# ---------------------------------------------------------------------------
# State persistence


def _version_dir(state_dir: Path, version: int) -> Path:
    return state_dir / f"v{version:04d}"


def _current_version(state_dir: Path) -> int | None:
    current = state_dir / "CURRENT"
    if not current.is_file():
        return None
    try:
        with open(current, "r", encoding="utf-8") as fh:
            return int(json.load(fh)["version"])
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise StateConflictError(f"corrupt CURRENT pointer: {exc}") from exc


def load_state(state_dir) -> PoolState | None:
    """Load the committed pool snapshot, verifying checksums."""
    state_dir = Path(state_dir)
    version = _current_version(state_dir)
    if version is None:
        return None
    vdir = _version_dir(state_dir, version)
    pool_json = vdir / "pool.json"
    if not pool_json.is_file():
        raise StateConflictError(f"missing snapshot for version {version}")
    with open(pool_json, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    for name, digest in meta["checksums"].items():
        path = vdir / name
        if not path.is_file() or sha256_file(path) != digest:
            raise StateConflictError(f"checksum mismatch for {name} in version {version}")

    records = read_bundle(vdir, timestep_added=0, validate=False)
    per_sample: dict[str, dict] = {}
    with open(vdir / "meta.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            per_sample[row["id"]] = row
    if set(per_sample) != {r.sample_id for r in records}:
        raise StateConflictError(f"meta.jsonl does not match snapshot ids in version {version}")
    restored = [
        replace(r, dataset_id=per_sample[r.sample_id]["dataset_id"], timestep_added=per_sample[r.sample_id]["t_added"])
        for r in records
    ]
    k = meta.get("k")
    cluster_of = None
    if k is not None:
        cluster_of = {row["id"]: row["cluster"] for row in per_sample.values()}
        if any(c is None for c in cluster_of.values()):
            cluster_of, k = None, None
    pool = DataPool(samples=tuple(restored), timestep=meta["timestep"], cluster_of=cluster_of, k=k)
    config = EngineConfig.from_dict(meta["config"]) if meta.get("config") else None
    return PoolState(version=version, pool=pool, k=k, config=config)


def _write_state(state_dir: Path, version: int, pool: DataPool, config: EngineConfig) -> None:
    """Write a full snapshot, then swap the CURRENT pointer (commit point)."""
    vdir = _version_dir(state_dir, version)
    vdir.mkdir(parents=True, exist_ok=False)
    write_bundle(pool.samples, vdir, dataset_id=POOL_DATASET_ID)
    with open(vdir / "meta.jsonl", "w", encoding="utf-8") as fh:
        for s in pool.samples:
            cluster = pool.cluster_of[s.sample_id] if pool.cluster_of is not None else None
            fh.write(
                canonical_json(
                    {"id": s.sample_id, "dataset_id": s.dataset_id, "t_added": s.timestep_added, "cluster": cluster}
                )
                + "\n"
            )
    files = sorted(p.name for p in vdir.iterdir() if p.name != "pool.json")
    checksums = {name: sha256_file(vdir / name) for name in files}
    write_json(
        vdir / "pool.json",
        {
            "format": STATE_FORMAT,
            "version": version,
            "timestep": pool.timestep,
            "n_samples": len(pool),
            "k": pool.k,
            "config": config.to_dict(),
            "config_hash": config.config_hash,
            "checksums": checksums,
        },
    )
    tmp = state_dir / "CURRENT.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump({"version": version}, fh)
        fh.write("\n")
    os.replace(tmp, state_dir / "CURRENT")


def _state_lock(state_dir: Path) -> FileLock:
    state_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(state_dir / ".lock"), timeout=0.5)


# ---------------------------------------------------------------------------
# Manifest / dump serialization


def _write_manifest_files(
    state_dir: Path,
    manifest: SelectionManifest,
    details: Sequence[ClusterSelection],
    kres: SelectKResult,
    config: EngineConfig,
) -> Path:
    mdir = state_dir / "manifests"
    mdir.mkdir(exist_ok=True)
    path = mdir / f"t{manifest.timestep:04d}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(
                canonical_json(
                    {
                        "sample_id": e.sample_id,
                        "cluster_id": e.cluster_id,
                        "selector_id": e.selector_id,
                        "normalized_score": e.normalized_score,
                    }
                )
                + "\n"
            )
    summary = {
        "timestep": manifest.timestep,
        "t_budget": manifest.budget,
        "seed": manifest.seed,
        "config_hash": manifest.config_hash,
        "n_selected": len(manifest.entries),
        "budget_mode": config.budget_mode,
        "k": kres.k_best,
        "wss_grid": {str(k): w for k, w in zip(kres.grid, kres.wss_per_k)},
        "clusters": [
            {
                "cluster_id": d.cluster_id,
                "size": d.size,
                "eligible": d.eligible,
                "selector": d.selector_id,
                "entropy": d.entropies,
                "budget": d.budget,
                "selected": int(d.selected_rows.size),
                "degenerate": d.degenerate,
            }
            for d in details
        ],
    }
    write_json(mdir / f"t{manifest.timestep:04d}.summary.json", summary)
    return path


def _write_cluster_dump(state_dir: Path, timestep: int, kres: SelectKResult, pool: DataPool) -> None:
    cdir = state_dir / "clusters"
    cdir.mkdir(exist_ok=True)
    write_json(
        cdir / f"t{timestep:04d}.json",
        {
            "k": kres.k_best,
            "wss_per_grid_value": {str(k): w for k, w in zip(kres.grid, kres.wss_per_k)},
            "chosen_k": kres.k_best,
            "monotone": kres.monotone,
            "iterations_run": kres.model.iterations_run,
        },
    )
    labels = np.asarray([pool.cluster_of[sid] for sid in pool.sample_ids], dtype="<u4")
    labels.tofile(cdir / f"t{timestep:04d}.assign.u32")


def _append_tombstones(state_dir: Path, timestep: int, removals: Sequence[str]) -> None:
    with open(state_dir / "tombstones.jsonl", "a", encoding="utf-8") as fh:
        for sid in removals:
            fh.write(canonical_json({"sample_id": sid, "timestep": timestep}) + "\n")


def _write_compression_plan(state_dir: Path, version: int, timestep: int, plan: CompressionPlan) -> None:
    mdir = state_dir / "manifests"
    mdir.mkdir(exist_ok=True)
    write_json(
        mdir / f"compression-v{version:04d}.json",
        {
            "state_version": version,
            "timestep": timestep,
            "pool_budget": plan.pool_budget,
            "n_removed": len(plan.removals),
            "per_cluster_target": list(plan.per_cluster_target),
            "removals": list(plan.removals),
        },
    )


# ---------------------------------------------------------------------------
# The advance step


def _effective_grid(grid: Sequence[int], n: int) -> tuple[int, ...]:
    usable = tuple(g for g in grid if g <= n)
    if usable:
        return usable
    return (max(1, min(n, min(grid))),)


def _ingest_records(records: list[SampleRecord], config: EngineConfig, timestep: int) -> list[SampleRecord]:
    """Apply projection-at-ingest for oversized gradient vectors."""
    records = [replace(r, timestep_added=timestep) for r in records]
    proj = config.projection
    if proj is None or not records:
        return records
    d_in = len(records[0].gradient_vec)
    if d_in == proj.output_dim:
        return records
    if d_in != proj.input_dim:
        raise BundleError(f"bundle gradient dim {d_in} matches neither projection input {proj.input_dim} nor output {proj.output_dim}")
    projected = project_many(np.stack([r.gradient_vec for r in records]), proj)
    return [replace(r, gradient_vec=projected[i].astype(np.float32)) for i, r in enumerate(records)]


def _check_compatible(previous: EngineConfig | None, config: EngineConfig) -> None:
    if previous is None:
        return
    if previous.structural_dict() != config.structural_dict():
        raise StateConflictError(
            "engine config is structurally incompatible with the existing state "
            f"(stored {previous.structural_dict()}, requested {config.structural_dict()})"
        )


def advance_timestep(state_dir, bundle_dir, config: EngineConfig) -> SelectionManifest:
    """Run one full curation step and commit the new pool version.

    merge -> select_k/kmeans on gradients -> score table -> subset selection
    -> manifest files; with a pool budget set, the pool is compressed after
    manifest emission. Raises BundleError for invalid bundles and
    StateConflictError for lock/checksum/config conflicts.
    """
    state_dir = Path(state_dir)
    lock = _state_lock(state_dir)
    try:
        lock.acquire()
    except Timeout as exc:
        raise StateConflictError(f"state is locked: {state_dir}") from exc
    try:
        return _advance_locked(state_dir, Path(bundle_dir), config)
    finally:
        lock.release()


def _advance_locked(state_dir: Path, bundle_dir: Path, config: EngineConfig) -> SelectionManifest:
    state = load_state(state_dir)
    _check_compatible(state.config if state else None, config)
    if config.pool_budget is not None and config.pool_budget < 1:
        raise ValueError("pool budget must be positive")

    report = validate_bundle(bundle_dir)
    if not report.ok:
        fatal = report.fatal
        raise BundleError(f"{fatal.name}: {fatal.detail}")

    timestep = state.pool.timestep + 1 if state else 0
    incoming = _ingest_records(read_bundle(bundle_dir, validate=False), config, timestep)

    pool = state.pool if state else DataPool(samples=(), timestep=0)
    existing = set(pool.sample_ids)
    refresh = [r for r in incoming if r.sample_id in existing]
    fresh = [r for r in incoming if r.sample_id not in existing]
    if refresh:
        # Re-supplied vectors for pooled samples: replace statistics in place,
        # keeping original provenance.
        by_id = {r.sample_id: r for r in refresh}
        updated = tuple(
            replace(
                by_id[s.sample_id],
                dataset_id=s.dataset_id,
                timestep_added=s.timestep_added,
            )
            if s.sample_id in by_id
            else s
            for s in pool.samples
        )
        pool = DataPool(samples=updated, timestep=pool.timestep)
    stale = len(pool) - len(refresh)
    if state and stale > 0:
        logger.warning("%d pooled samples reuse stored vectors at t=%d (no refresh in bundle)", stale, timestep)

    pool = merge_pool(pool, fresh, timestep)
    if len(pool) == 0:
        raise BundleError("nothing to select from: pool is empty after merge")

    cluster_seed = derive_seed(config.master_seed, timestep, "cluster")
    grid = _effective_grid(config.k_grid, len(pool))
    kres = select_k(pool.gradient_matrix(), grid=grid, seed=cluster_seed, ids=pool.sample_ids)
    pool = pool.with_clusters(kres.model.assignments, kres.k_best)

    if config.pool_budget is not None and config.pool_budget < kres.k_best:
        raise ValueError(f"pool budget {config.pool_budget} < chosen k={kres.k_best}")

    table = build_score_table(pool, registry=config.registry, hist=config.histogram)
    if config.dump_scores:
        dump_scores(table, state_dir / "scores", prefix=f"t{timestep:04d}.scores")
    select_seed = derive_seed(config.master_seed, timestep, "select")
    manifest, details = select_subset_detailed(
        pool,
        kres.model,
        table,
        config.t_budget,
        spec=config.histogram,
        seed=select_seed,
        mode=config.budget_mode,
        registry=config.registry,
        config_hash=config.config_hash,
    )
    manifest = replace(manifest, seed=config.master_seed)

    _write_manifest_files(state_dir, manifest, details, kres, config)
    _write_cluster_dump(state_dir, timestep, kres, pool)

    plan = None
    if config.pool_budget is not None:
        pool, plan = compress_pool(pool, kres.model, config.pool_budget)

    version = (state.version + 1) if state else 0
    _write_state(state_dir, version, pool, config)
    if plan is not None:
        _write_compression_plan(state_dir, version, timestep, plan)
        _append_tombstones(state_dir, timestep, plan.removals)
    return manifest


def compress_state(state_dir, pool_budget: int) -> CompressionPlan:
    """Standalone Lite-mode compression of the committed pool."""
    state_dir = Path(state_dir)
    lock = _state_lock(state_dir)
    try:
        lock.acquire()
    except Timeout as exc:
        raise StateConflictError(f"state is locked: {state_dir}") from exc
    try:
        state = load_state(state_dir)
        if state is None:
            raise StateConflictError(f"no committed state in {state_dir}")
        if state.pool.cluster_of is None:
            raise StateConflictError("pool has no stored cluster assignments; run an advance first")
        pool, plan = compress_pool(state.pool, None, pool_budget)
        config = state.config or EngineConfig()
        version = state.version + 1
        _write_state(state_dir, version, pool, config)
        _write_compression_plan(state_dir, version, state.pool.timestep, plan)
        _append_tombstones(state_dir, state.pool.timestep, plan.removals)
        return plan
    finally:
        lock.release()


# ---------------------------------------------------------------------------
# Reporting


def report(state_dir, performance_csv, out_dir=None) -> dict[str, Path]:
    """Write metrics JSON, selector/cluster summaries, and plots-ready CSVs.

    Output is a pure function of the state and the CSV, so regenerating
    produces identical files.
    """
    state_dir = Path(state_dir)
    out_dir = Path(out_dir) if out_dir else state_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    table = read_performance_csv(performance_csv)
    upper = skill_upper_bounds(table)
    write_json(out_dir / "metrics.json", metrics_report(table, upper))

    summaries = sorted((state_dir / "manifests").glob("t*.summary.json")) if (state_dir / "manifests").is_dir() else []
    selector_rows = []
    for path in summaries:
        with open(path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        for cluster in summary["clusters"]:
            selector_rows.append(
                [
                    summary["timestep"],
                    cluster["cluster_id"],
                    cluster["size"],
                    cluster["eligible"],
                    cluster["selector"],
                    repr(cluster["entropy"][cluster["selector"]]),
                    cluster["budget"],
                    cluster["selected"],
                ]
            )
    with open(out_dir / "selectors.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep", "cluster_id", "size", "eligible", "selector", "entropy", "budget", "selected"])
        writer.writerows(selector_rows)

    with open(out_dir / "average_accuracy.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep", "average_accuracy"])
        for t in range(table.n_timesteps):
            writer.writerow([t, repr(float(np.mean(table.values[:, t])))])

    with open(out_dir / "skill_accuracy.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["skill", "timestep", "accuracy"])
        for s, skill in enumerate(table.skills):
            for t in range(table.n_timesteps):
                writer.writerow([skill, t, repr(float(table.values[s, t]))])

    return {
        "metrics": out_dir / "metrics.json",
        "selectors": out_dir / "selectors.csv",
        "average_accuracy": out_dir / "average_accuracy.csv",
        "skill_accuracy": out_dir / "skill_accuracy.csv",
    }
