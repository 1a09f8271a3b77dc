"""Writer for the ingestion-bundle wire format the curation engine reads.

Layout: manifest.json plus little-endian binaries. Row-major float32
matrices grad.f32 / sem.f32, flat NLL streams nll_img.f32 / nll_txt.f32
indexed by offsets.u64 (n+1 uint64), scalars.f32 with (el2n_raw,
entropy_raw) per sample, and ids.jsonl with one JSON string per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FILES = {
    "grad": "grad.f32",
    "sem": "sem.f32",
    "nll_img": "nll_img.f32",
    "nll_txt": "nll_txt.f32",
    "offsets": "offsets.u64",
    "scalars": "scalars.f32",
    "ids": "ids.jsonl",
}


@dataclass
class SampleStats:
    sample_id: str
    gradient_vec: np.ndarray
    semantic_vec: np.ndarray
    nll_with_image: np.ndarray
    nll_text_only: np.ndarray
    el2n_raw: float
    entropy_raw: float


def write_bundle(stats: list[SampleStats], out_dir, dataset_id: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(stats)
    if n == 0:
        raise ValueError("refusing to write an empty bundle")
    d_g = len(stats[0].gradient_vec)
    d_s = len(stats[0].semantic_vec)

    np.stack([s.gradient_vec for s in stats]).astype("<f4").tofile(out_dir / FILES["grad"])
    np.stack([s.semantic_vec for s in stats]).astype("<f4").tofile(out_dir / FILES["sem"])
    offsets = np.zeros(n + 1, dtype="<u8")
    offsets[1:] = np.cumsum([len(s.nll_with_image) for s in stats])
    offsets.tofile(out_dir / FILES["offsets"])
    np.concatenate([s.nll_with_image for s in stats]).astype("<f4").tofile(out_dir / FILES["nll_img"])
    np.concatenate([s.nll_text_only for s in stats]).astype("<f4").tofile(out_dir / FILES["nll_txt"])
    np.asarray([[s.el2n_raw, s.entropy_raw] for s in stats], dtype="<f4").tofile(out_dir / FILES["scalars"])
    with open(out_dir / FILES["ids"], "w", encoding="utf-8") as fh:
        for s in stats:
            fh.write(json.dumps(s.sample_id) + "\n")
    manifest = {
        "version": 1,
        "dataset_id": dataset_id,
        "n_samples": n,
        "d_g": d_g,
        "d_s": d_s,
        "files": dict(FILES),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return out_dir
