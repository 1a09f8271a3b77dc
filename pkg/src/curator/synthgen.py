"""Deterministic synthetic skill-stream generator for tests and acceptance.

Each skill gets a fixed gradient-space center and an independent
semantic-space center; samples are isotropic Gaussian draws around them,
so cluster separation is controlled in units of the within-skill std (1.0).
Score distributions are steerable per skill through the NLL level/spread
and the scalar ranges, which lets tests plant constant or skill-correlated
score columns. Duplicates are exact vector copies under fresh ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
import numpy as np

from ._util import as_u64, derive_seed
from .datamodel import SampleRecord, write_bundle


@dataclass(frozen=True)
class SkillSpec:
    """One planted skill and the knobs shaping its score distributions."""

    name: str
    count: int
    nll_level: tuple[float, float] = (0.5, 2.5)  # per-sample mean NLL range
    ig_factor: tuple[float, float] = (1.0, 1.5)  # text-only NLL multiplier range
    el2n_range: tuple[float, float] = (0.1, 1.2)
    entropy_range: tuple[float, float] = (0.1, 3.0)

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("skill counts must be positive")


@dataclass(frozen=True)
class StreamSpec:
    n_timesteps: int
    skills: tuple[SkillSpec, ...]
    duplicate_fraction: float = 0.0
    separation: float = 10.0
    seed: int = 0
    d_g: int = 64
    d_s: int = 32
    near_duplicate_cosine: float | None = None  # None = exact copies

    def __post_init__(self):
        object.__setattr__(self, "skills", tuple(self.skills))
        if self.n_timesteps <= 0:
            raise ValueError("n_timesteps must be positive")
        if not self.skills:
            raise ValueError("at least one skill required")
        if not 0.0 <= self.duplicate_fraction < 1.0:
            raise ValueError("duplicate_fraction must be in [0, 1)")
        if self.separation <= 0:
            raise ValueError("separation must be positive")


@dataclass(frozen=True)
class GeneratedStream:
    bundle_dirs: tuple[Path, ...]
    labels_path: Path
    duplicates_path: Path
    labels: dict[str, str]
    duplicate_of: dict[str, str]


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1)[:, None]


def _tilt(vec: np.ndarray, cosine: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate vec toward a random orthogonal direction so cos(vec, out) = cosine."""
    norm = np.linalg.norm(vec)
    u = vec / norm
    w = rng.normal(size=vec.shape)
    w -= np.dot(w, u) * u
    w /= np.linalg.norm(w)
    return norm * (cosine * u + np.sqrt(1.0 - cosine**2) * w)


def generate(spec: StreamSpec, out_dir) -> GeneratedStream:
    """Write one bundle per timestep plus ground-truth label files.

    Same StreamSpec, same bytes: every draw comes from PCG64 streams derived
    from the stream seed, and bundle serialization is canonical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    center_rng = np.random.Generator(np.random.PCG64(as_u64(derive_seed(spec.seed, "centers"))))
    grad_centers = spec.separation * _unit_rows(center_rng, len(spec.skills), spec.d_g)
    sem_centers = 5.0 * _unit_rows(center_rng, len(spec.skills), spec.d_s)

    labels: dict[str, str] = {}
    duplicate_of: dict[str, str] = {}
    bundle_dirs: list[Path] = []

    for t in range(spec.n_timesteps):
        rng = np.random.Generator(np.random.PCG64(as_u64(derive_seed(spec.seed, "timestep", t))))
        records: list[SampleRecord] = []
        for s_idx, skill in enumerate(spec.skills):
            originals: list[SampleRecord] = []
            for i in range(skill.count):
                sample_id = f"t{t}-{skill.name}-{i:05d}"
                grad = grad_centers[s_idx] + rng.normal(size=spec.d_g)
                sem = sem_centers[s_idx] + rng.normal(size=spec.d_s)
                n_tok = int(rng.integers(5, 21))
                level = rng.uniform(*skill.nll_level)
                nll_img = np.clip(level * rng.uniform(0.8, 1.2, size=n_tok), 0.0, None)
                factor = rng.uniform(*skill.ig_factor)
                nll_txt = nll_img * factor
                rec = SampleRecord(
                    sample_id=sample_id,
                    dataset_id=f"synth-t{t}",
                    timestep_added=t,
                    gradient_vec=grad.astype(np.float32),
                    semantic_vec=sem.astype(np.float32),
                    nll_with_image=nll_img.astype(np.float32),
                    nll_text_only=nll_txt.astype(np.float32),
                    el2n_raw=float(rng.uniform(*skill.el2n_range)),
                    entropy_raw=float(rng.uniform(*skill.entropy_range)),
                )
                originals.append(rec)
                labels[sample_id] = skill.name
            records.extend(originals)

            n_dup = int(np.floor(spec.duplicate_fraction * skill.count))
            for i in range(n_dup):
                src = originals[i]
                dup_id = f"{src.sample_id}-dup"
                grad, sem = src.gradient_vec, src.semantic_vec
                if spec.near_duplicate_cosine is not None:
                    grad = _tilt(np.asarray(grad, float), spec.near_duplicate_cosine, rng).astype(np.float32)
                    sem = _tilt(np.asarray(sem, float), spec.near_duplicate_cosine, rng).astype(np.float32)
                records.append(
                    SampleRecord(
                        sample_id=dup_id,
                        dataset_id=src.dataset_id,
                        timestep_added=t,
                        gradient_vec=grad,
                        semantic_vec=sem,
                        nll_with_image=src.nll_with_image,
                        nll_text_only=src.nll_text_only,
                        el2n_raw=src.el2n_raw,
                        entropy_raw=src.entropy_raw,
                    )
                )
                labels[dup_id] = skill.name
                duplicate_of[dup_id] = src.sample_id

        bundle_dir = out_dir / f"t{t:04d}"
        write_bundle(records, bundle_dir, dataset_id=f"synth-t{t}")
        bundle_dirs.append(bundle_dir)

    labels_path = out_dir / "labels.jsonl"
    with open(labels_path, "w", encoding="utf-8") as fh:
        for sid in sorted(labels):
            fh.write(json.dumps({"sample_id": sid, "skill": labels[sid]}) + "\n")
    duplicates_path = out_dir / "duplicates.jsonl"
    with open(duplicates_path, "w", encoding="utf-8") as fh:
        for sid in sorted(duplicate_of):
            fh.write(json.dumps({"dup": sid, "of": duplicate_of[sid]}) + "\n")

    return GeneratedStream(
        bundle_dirs=tuple(bundle_dirs),
        labels_path=labels_path,
        duplicates_path=duplicates_path,
        labels=labels,
        duplicate_of=duplicate_of,
    )
