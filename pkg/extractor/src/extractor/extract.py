"""Statistics extraction: two NLL passes (with and without the image-context
segment), selected-layer gradients, and mean-pooled hidden states, reduced
and written as an ingestion bundle.

The "image context" of this text-only demonstration model is a designated
prefix segment of the sequence; the text-only pass simply drops it, which
preserves the two-pass perplexity-ratio contract without a vision tower.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .bundle import SampleStats, write_bundle
from .model import TinyCausalLM, answer_span, build_sequence
from .projection import project_rows
from .zeroorder import zero_order_gradient


@dataclass(frozen=True)
class ExtractionConfig:
    model_id: str = "tiny"
    layer: str = "middle"  # first | middle | last | all
    grad_mode: str = "backprop"  # backprop | zero_order
    n_probes: int = 64
    eps: float = 1e-3
    delimiter: str = "\n"
    proj_output_dim: int = 1024
    proj_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.grad_mode not in ("backprop", "zero_order"):
            raise ValueError(f"unknown grad mode {self.grad_mode!r}")
        if self.layer not in ("first", "middle", "last", "all"):
            raise ValueError(f"unknown layer selector {self.layer!r}")
        if self.n_probes < 1:
            raise ValueError("n_probes must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def load_dataset(path) -> list[dict]:
    """JSONL of {"context": ..., "answer": ..., "image": optional str}."""
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            row = json.loads(line)
            if "context" not in row or "answer" not in row:
                raise ValueError(f"line {lineno}: needs 'context' and 'answer'")
            samples.append(row)
    if not samples:
        raise ValueError(f"no samples in {path}")
    return samples


def _answer_stats(model: TinyCausalLM, tokens: list[int], delimiter: str) -> tuple[np.ndarray, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-answer-token NLLs plus (loss, probs over answer positions, hidden)."""
    start, stop = answer_span(tokens, delimiter)
    seq = torch.tensor(tokens, dtype=torch.long)
    logits, hidden = model(seq)
    logits = logits[0]
    log_probs = torch.log_softmax(logits[start - 1 : stop - 1], dim=-1)
    targets = seq[start:stop]
    nll = -log_probs[torch.arange(stop - start), targets]
    if not torch.all(torch.isfinite(nll)):
        raise ValueError("non-finite loss")
    loss = nll.mean()
    probs = torch.softmax(logits[start - 1 : stop - 1], dim=-1)
    return nll.detach().numpy().astype(np.float32), loss, probs, hidden


def _flatten_grads(params) -> np.ndarray:
    return np.concatenate([p.grad.detach().numpy().ravel() for p in params]).astype(np.float64)


def _flatten_params(params) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in params])


def _write_back(params, flat: torch.Tensor) -> None:
    offset = 0
    with torch.no_grad():
        for p in params:
            count = p.numel()
            p.copy_(flat[offset : offset + count].reshape(p.shape).to(p.dtype))
            offset += count


def extract_stats(samples: list[dict], config: ExtractionConfig, out_dir, dataset_id: str = "extracted") -> Path:
    """Run the model over (context, answer) pairs and write the bundle.

    Per sample: answer-token NLLs under full context and with the image
    segment removed; selected-layer gradient of the mean answer NLL
    (backprop or zero-order), projected; mean-pooled final hidden state;
    EL2N and entropy reduced as means over answer tokens.
    """
    torch.set_num_threads(1)  # fixed reduction order, byte-stable outputs
    model = TinyCausalLM(config.model_id, seed=config.seed)
    model.eval()
    params = model.layer_parameters(config.layer)

    raw_grads, stats = [], []
    for idx, sample in enumerate(samples):
        image = sample.get("image", "")
        context, answer = sample["context"], sample["answer"]
        full = build_sequence(image, context, answer, config.delimiter)
        text_only = build_sequence("", context, answer, config.delimiter)

        model.zero_grad(set_to_none=True)
        nll_img, loss, probs, hidden = _answer_stats(model, full, config.delimiter)
        with torch.no_grad():
            sem = hidden[0].mean(dim=0).numpy().astype(np.float32)
            one_hot = torch.zeros_like(probs)
            seq = torch.tensor(full, dtype=torch.long)
            start, stop = answer_span(full, config.delimiter)
            one_hot[torch.arange(stop - start), seq[start:stop]] = 1.0
            el2n_raw = float(torch.linalg.norm(probs - one_hot, dim=-1).mean())
            plogp = torch.where(probs > 0, probs * probs.log(), torch.zeros_like(probs))
            entropy_raw = float((-plogp.sum(dim=-1)).mean())

        if config.grad_mode == "backprop":
            loss.backward()
            grad = _flatten_grads(params)
        else:
            flat0 = _flatten_params(params)

            def loss_at(w: torch.Tensor) -> float:
                _write_back(params, w.to(torch.float32))
                with torch.no_grad():
                    _, probe_loss, _, _ = _answer_stats(model, full, config.delimiter)
                return float(probe_loss)

            try:
                grad_t = zero_order_gradient(
                    loss_at, flat0, config.n_probes, config.eps, seed=(config.seed * 1_000_003 + idx)
                )
            finally:
                _write_back(params, flat0)
            grad = grad_t.numpy().astype(np.float64)

        with torch.no_grad():
            nll_txt, _, _, _ = _answer_stats(model, text_only, config.delimiter)
        if len(nll_txt) != len(nll_img):
            raise ValueError(f"sample {idx}: answer spans differ between passes")

        raw_grads.append(grad)
        stats.append(
            SampleStats(
                sample_id=sample.get("sample_id", f"{dataset_id}-{idx:06d}"),
                gradient_vec=np.zeros(0, dtype=np.float32),  # filled after projection
                semantic_vec=sem,
                nll_with_image=nll_img,
                nll_text_only=nll_txt,
                el2n_raw=el2n_raw,
                entropy_raw=entropy_raw,
            )
        )

    grads = np.stack(raw_grads)
    if config.proj_output_dim < grads.shape[1]:
        grads = project_rows(grads, config.proj_output_dim, config.proj_seed)
    for i, s in enumerate(stats):
        s.gradient_vec = grads[i].astype(np.float32)
    return write_bundle(stats, out_dir, dataset_id=dataset_id)


def make_demo_dataset(path, n: int = 32, seed: int = 0) -> Path:
    """Small synthetic (image, context, answer) dataset for demos and tests."""
    import random

    rng = random.Random(seed)
    subjects = ["a red kite", "two dogs", "the river", "an old clock", "a paper boat"]
    verbs = ["drifts over", "waits beside", "circles", "hides behind", "faces"]
    places = ["the harbor", "a pine forest", "the market square", "a snowy field"]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            scene = f"{rng.choice(subjects)} {rng.choice(verbs)} {rng.choice(places)}"
            question = "describe the scene:"
            answer = scene if rng.random() < 0.5 else f"{rng.choice(subjects)} at rest"
            row = {
                "sample_id": f"demo-{i:04d}",
                "image": scene + ". " if rng.random() < 0.8 else "",
                "context": question,
                "answer": answer,
            }
            fh.write(json.dumps(row) + "\n")
    return path
