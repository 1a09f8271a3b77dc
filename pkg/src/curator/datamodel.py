"""Shared domain types, the ingestion-bundle disk format, and validation.

A bundle is a directory holding ``manifest.json`` plus raw little-endian
matrices: per-sample gradient and semantic vectors (``grad.f32``,
``sem.f32``), two variable-length NLL streams (``nll_img.f32``,
``nll_txt.f32``) indexed by a shared ``offsets.u64``, two precomputed
scalars per sample (``scalars.f32``), and ``ids.jsonl``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._util import write_json


class CuratorError(Exception):
    """Base class for engine errors."""


class BundleError(CuratorError):
    """A bundle failed validation or could not be read."""


class StateConflictError(CuratorError):
    """State directory is locked, corrupt, or incompatible with the config."""


BUNDLE_VERSION = 1
DEFAULT_FILES = {
    "grad": "grad.f32",
    "sem": "sem.f32",
    "nll_img": "nll_img.f32",
    "nll_txt": "nll_txt.f32",
    "offsets": "offsets.u64",
    "scalars": "scalars.f32",
    "ids": "ids.jsonl",
}


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)  # own a copy; never freeze the caller's array
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SampleRecord:
    """One training sample's identity plus its extracted statistics."""

    sample_id: str
    dataset_id: str
    timestep_added: int
    gradient_vec: np.ndarray
    semantic_vec: np.ndarray
    nll_with_image: np.ndarray
    nll_text_only: np.ndarray
    el2n_raw: float
    entropy_raw: float

    def __post_init__(self):
        object.__setattr__(self, "gradient_vec", _readonly(np.asarray(self.gradient_vec, dtype=np.float32)))
        object.__setattr__(self, "semantic_vec", _readonly(np.asarray(self.semantic_vec, dtype=np.float32)))
        object.__setattr__(self, "nll_with_image", _readonly(np.asarray(self.nll_with_image, dtype=np.float32)))
        object.__setattr__(self, "nll_text_only", _readonly(np.asarray(self.nll_text_only, dtype=np.float32)))
        if self.timestep_added < 0:
            raise ValueError(f"sample {self.sample_id}: negative timestep_added")
        if len(self.nll_with_image) != len(self.nll_text_only):
            raise ValueError(f"sample {self.sample_id}: NLL stream lengths differ")
        if len(self.nll_with_image) == 0:
            raise ValueError(f"sample {self.sample_id}: empty NLL streams")
        for name in ("nll_with_image", "nll_text_only"):
            vals = getattr(self, name)
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValueError(f"sample {self.sample_id}: {name} must be finite and >= 0")
        for name in ("gradient_vec", "semantic_vec"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"sample {self.sample_id}: {name} has non-finite values")
        for name in ("el2n_raw", "entropy_raw"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"sample {self.sample_id}: {name} must be finite and >= 0")


@dataclass(frozen=True)
class DataPool:
    """The full multi-dataset sample collection at one timestep.

    Immutable: merging, clustering, and compression all return new pools.
    """

    samples: tuple[SampleRecord, ...]
    timestep: int = 0
    cluster_of: Mapping[str, int] | None = None
    k: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            seen = set()
            for sid in ids:
                if sid in seen:
                    raise ValueError(f"duplicate sample_id in pool: {sid!r}")
                seen.add(sid)
        if self.cluster_of is not None:
            if self.k is None or self.k <= 0:
                raise ValueError("clustered pool requires a positive k")
            missing = [sid for sid in ids if sid not in self.cluster_of]
            if missing:
                raise ValueError(f"{len(missing)} samples lack a cluster assignment (first: {missing[0]!r})")
            bad = [sid for sid in ids if not (0 <= self.cluster_of[sid] < self.k)]
            if bad:
                raise ValueError(f"cluster index out of range for {bad[0]!r}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(s.sample_id for s in self.samples)

    def gradient_matrix(self) -> np.ndarray:
        return np.stack([s.gradient_vec for s in self.samples]) if self.samples else np.zeros((0, 0), np.float32)

    def semantic_matrix(self) -> np.ndarray:
        return np.stack([s.semantic_vec for s in self.samples]) if self.samples else np.zeros((0, 0), np.float32)

    def with_clusters(self, assignments: Mapping[str, int], k: int) -> "DataPool":
        return replace(self, cluster_of=dict(assignments), k=k)

    def cluster_members(self) -> list[np.ndarray]:
        """Row positions per cluster, ascending within each cluster."""
        if self.cluster_of is None:
            raise ValueError("pool is not clustered")
        members: list[list[int]] = [[] for _ in range(self.k)]
        for row, s in enumerate(self.samples):
            members[self.cluster_of[s.sample_id]].append(row)
        return [np.asarray(m, dtype=np.int64) for m in members]


@dataclass(frozen=True)
class SelectorRegistry:
    """Ordered scoring-function identifiers; order is the tie-break order."""

    function_ids: tuple[str, ...] = ("perplexity", "image_grounding", "el2n", "entropy")

    def __post_init__(self):
        object.__setattr__(self, "function_ids", tuple(self.function_ids))
        if not self.function_ids:
            raise ValueError("registry must not be empty")
        if len(set(self.function_ids)) != len(self.function_ids):
            raise ValueError("registry identifiers must be unique")


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    cluster_id: int
    selector_id: str
    normalized_score: float


@dataclass(frozen=True)
class SelectionManifest:
    """The chosen subset for one timestep."""

    timestep: int
    budget: int
    entries: tuple[ManifestEntry, ...]
    seed: int
    config_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) > self.budget:
            raise ValueError("manifest exceeds budget")
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest contains duplicate sample ids")

    @property
    def sample_ids(self) -> tuple[str, ...]:
        return tuple(e.sample_id for e in self.entries)


@dataclass(frozen=True)
class PerformanceTable:
    """Skills x timesteps accuracy matrix, values in [0, 100]."""

    skills: tuple[str, ...]
    values: np.ndarray
    upper_bounds: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "skills", tuple(self.skills))
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != len(self.skills):
            raise ValueError("values must be a skills x timesteps matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("performance table has missing or non-finite cells")
        object.__setattr__(self, "values", _readonly(values))
        if self.upper_bounds is not None:
            ub = np.asarray(self.upper_bounds, dtype=np.float64)
            if ub.shape != (len(self.skills),):
                raise ValueError("upper_bounds must have one entry per skill")
            if np.any(ub <= 0):
                raise ValueError("upper_bounds must be positive")
            object.__setattr__(self, "upper_bounds", _readonly(ub))

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# Bundle validation


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    bundle_dir: str
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def fatal(self) -> CheckResult | None:
        for c in self.checks:
            if not c.ok:
                return c
        return None

    def describe(self) -> str:
        lines = [f"bundle: {self.bundle_dir}"]
        for c in self.checks:
            status = "ok" if c.ok else "FATAL"
            lines.append(f"  [{status}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines)


def _load_manifest(bundle_dir: Path) -> dict:
    path = bundle_dir / "manifest.json"
    if not path.is_file():
        raise BundleError(f"missing file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    required = ["version", "dataset_id", "n_samples", "d_g", "d_s", "files"]
    for key in required:
        if key not in manifest:
            raise BundleError(f"manifest missing key {key!r}")
    for key in DEFAULT_FILES:
        if key not in manifest["files"]:
            raise BundleError(f"manifest files missing entry {key!r}")
    return manifest


def validate_bundle(bundle_dir) -> ValidationReport:
    """Run the structural checks on a bundle directory.

    Checks run in order and stop at the first FATAL; a corrupt bundle must
    never enter the pool. The input is never mutated.
    """
    bundle_dir = Path(bundle_dir)
    checks: list[CheckResult] = []

    def fail(name: str, detail: str) -> ValidationReport:
        checks.append(CheckResult(name, False, detail))
        return ValidationReport(str(bundle_dir), tuple(checks))

    def passed(name: str, detail: str = "") -> None:
        checks.append(CheckResult(name, True, detail))

    if not bundle_dir.is_dir():
        return fail("bundle_dir", f"not a directory: {bundle_dir}")
    passed("bundle_dir")

    try:
        manifest = _load_manifest(bundle_dir)
    except (BundleError, json.JSONDecodeError) as exc:
        return fail("manifest_parses", str(exc))
    passed("manifest_parses")

    n = int(manifest["n_samples"])
    d_g = int(manifest["d_g"])
    d_s = int(manifest["d_s"])
    files = {key: bundle_dir / name for key, name in manifest["files"].items()}
    if n < 0 or d_g <= 0 or d_s <= 0:
        return fail("manifest_dims", f"invalid sizes n={n} d_g={d_g} d_s={d_s}")
    passed("manifest_dims")

    for key, path in files.items():
        if not path.is_file():
            return fail("files_present", f"missing file: {path.name}")
    passed("files_present")

    expected = {"grad": n * d_g * 4, "sem": n * d_s * 4, "scalars": n * 2 * 4, "offsets": (n + 1) * 8}
    for key, nbytes in expected.items():
        actual = files[key].stat().st_size
        if actual != nbytes:
            return fail("matrix_sizes", f"{files[key].name}: expected {nbytes} bytes, found {actual}")
    passed("matrix_sizes")

    offsets = np.fromfile(files["offsets"], dtype="<u8")
    if offsets[0] != 0:
        return fail("offsets_monotone", f"offsets[0] = {offsets[0]}, expected 0")
    if np.any(np.diff(offsets.astype(np.int64)) < 0):
        bad = int(np.argmax(np.diff(offsets.astype(np.int64)) < 0))
        return fail("offsets_monotone", f"offsets decrease at sample {bad}")
    passed("offsets_monotone")

    empty = np.flatnonzero(np.diff(offsets) == 0)
    if empty.size:
        return fail("nll_lengths", f"sample {int(empty[0])}: empty NLL span")
    total = int(offsets[-1])
    for key in ("nll_img", "nll_txt"):
        actual = files[key].stat().st_size // 4
        if actual != total:
            if actual < total:
                # first sample whose span is not fully covered by the stream
                sample = int(np.searchsorted(offsets, actual, side="right")) - 1
                return fail("nll_lengths", f"{files[key].name}: stream truncated within sample {sample}")
            return fail("nll_lengths", f"{files[key].name}: {actual - total} trailing floats beyond offsets")
    passed("nll_lengths")

    try:
        with open(files["ids"], "r", encoding="utf-8") as fh:
            ids = [json.loads(line) for line in fh if line.strip()]
    except json.JSONDecodeError as exc:
        return fail("ids", f"ids.jsonl parse error: {exc}")
    if len(ids) != n:
        return fail("ids", f"expected {n} ids, found {len(ids)}")
    if any(not isinstance(i, str) for i in ids):
        return fail("ids", "ids must be JSON strings")
    if len(set(ids)) != n:
        return fail("ids", "duplicate sample ids")
    passed("ids")

    grad = np.fromfile(files["grad"], dtype="<f4")
    sem = np.fromfile(files["sem"], dtype="<f4")
    scalars = np.fromfile(files["scalars"], dtype="<f4")
    for name, mat, dim in (("grad", grad, d_g), ("sem", sem, d_s)):
        bad = np.flatnonzero(~np.isfinite(mat))
        if bad.size:
            return fail("finite_values", f"{name}: non-finite value at sample {int(bad[0]) // dim}")
    for key in ("nll_img", "nll_txt"):
        stream = np.fromfile(files[key], dtype="<f4")
        bad = np.flatnonzero(~np.isfinite(stream) | (stream < 0))
        if bad.size:
            sample = int(np.searchsorted(offsets, int(bad[0]), side="right")) - 1
            return fail("finite_values", f"{key}: invalid NLL at sample {sample}")
    bad = np.flatnonzero(~np.isfinite(scalars) | (scalars < 0))
    if bad.size:
        return fail("finite_values", f"scalars: invalid value at sample {int(bad[0]) // 2}")
    passed("finite_values")

    return ValidationReport(str(bundle_dir), tuple(checks))


# ---------------------------------------------------------------------------
# Bundle I/O


def read_bundle(bundle_dir, timestep_added: int = 0, validate: bool = True) -> list[SampleRecord]:
    """Load a bundle directory into SampleRecords.

    Validates first by default; an invalid bundle raises BundleError.
    """
    bundle_dir = Path(bundle_dir)
    if validate:
        report = validate_bundle(bundle_dir)
        if not report.ok:
            fatal = report.fatal
            raise BundleError(f"{fatal.name}: {fatal.detail}")
    manifest = _load_manifest(bundle_dir)
    n = int(manifest["n_samples"])
    d_g, d_s = int(manifest["d_g"]), int(manifest["d_s"])
    files = {key: bundle_dir / name for key, name in manifest["files"].items()}

    grad = np.fromfile(files["grad"], dtype="<f4").reshape(n, d_g)
    sem = np.fromfile(files["sem"], dtype="<f4").reshape(n, d_s)
    offsets = np.fromfile(files["offsets"], dtype="<u8").astype(np.int64)
    nll_img = np.fromfile(files["nll_img"], dtype="<f4")
    nll_txt = np.fromfile(files["nll_txt"], dtype="<f4")
    scalars = np.fromfile(files["scalars"], dtype="<f4").reshape(n, 2)
    with open(files["ids"], "r", encoding="utf-8") as fh:
        ids = [json.loads(line) for line in fh if line.strip()]

    records = []
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        records.append(
            SampleRecord(
                sample_id=ids[i],
                dataset_id=manifest["dataset_id"],
                timestep_added=timestep_added,
                gradient_vec=grad[i],
                semantic_vec=sem[i],
                nll_with_image=nll_img[lo:hi],
                nll_text_only=nll_txt[lo:hi],
                el2n_raw=float(scalars[i, 0]),
                entropy_raw=float(scalars[i, 1]),
            )
        )
    return records


def write_bundle(records: Sequence[SampleRecord], out_dir, dataset_id: str) -> Path:
    """Serialize records as a bundle directory (the inverse of read_bundle)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(records)
    d_g = len(records[0].gradient_vec) if n else 0
    d_s = len(records[0].semantic_vec) if n else 0

    grad = np.stack([r.gradient_vec for r in records]).astype("<f4") if n else np.zeros((0, 0), "<f4")
    sem = np.stack([r.semantic_vec for r in records]).astype("<f4") if n else np.zeros((0, 0), "<f4")
    lengths = [len(r.nll_with_image) for r in records]
    offsets = np.zeros(n + 1, dtype="<u8")
    offsets[1:] = np.cumsum(lengths)
    nll_img = np.concatenate([r.nll_with_image for r in records]).astype("<f4") if n else np.zeros(0, "<f4")
    nll_txt = np.concatenate([r.nll_text_only for r in records]).astype("<f4") if n else np.zeros(0, "<f4")
    scalars = np.asarray([[r.el2n_raw, r.entropy_raw] for r in records], dtype="<f4")

    grad.tofile(out_dir / DEFAULT_FILES["grad"])
    sem.tofile(out_dir / DEFAULT_FILES["sem"])
    nll_img.tofile(out_dir / DEFAULT_FILES["nll_img"])
    nll_txt.tofile(out_dir / DEFAULT_FILES["nll_txt"])
    offsets.tofile(out_dir / DEFAULT_FILES["offsets"])
    scalars.tofile(out_dir / DEFAULT_FILES["scalars"])
    with open(out_dir / DEFAULT_FILES["ids"], "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.sample_id) + "\n")
    manifest = {
        "version": BUNDLE_VERSION,
        "dataset_id": dataset_id,
        "n_samples": n,
        "d_g": d_g,
        "d_s": d_s,
        "files": dict(DEFAULT_FILES),
    }
    write_json(out_dir / "manifest.json", manifest)
    return out_dir


# ---------------------------------------------------------------------------
# Pool operations


def merge_pool(pool: DataPool, new_samples: Iterable[SampleRecord], timestep: int) -> DataPool:
    """Add a batch of samples to the pool at the given timestep.

    Prior cluster assignments are cleared: representations reflect the
    model state that produced them, so stale clusters are invalid.
    """
    if timestep < 0:
        raise ValueError("timestep must be non-negative")
    new_samples = list(new_samples)
    existing = set(pool.sample_ids)
    for s in new_samples:
        if s.sample_id in existing:
            raise ValueError(f"duplicate sample_id: {s.sample_id!r}")
        existing.add(s.sample_id)
    if new_samples:
        dims = {(len(s.gradient_vec), len(s.semantic_vec)) for s in new_samples}
        if pool.samples:
            dims.add((len(pool.samples[0].gradient_vec), len(pool.samples[0].semantic_vec)))
        if len(dims) > 1:
            raise ValueError(f"vector dimension mismatch across samples: {sorted(dims)}")
    return DataPool(samples=pool.samples + tuple(new_samples), timestep=timestep)
