"""Tiny byte-level causal transformer used as the demonstration model.

Weights are initialized from an explicit seeded generator, so a (model_id,
seed) pair always produces the same parameters. The model is deliberately
small: the point is realistic statistics plumbing, not language quality.
"""

from __future__ import annotations

import torch
from torch import nn

VOCAB_SIZE = 257  # 256 byte values + BOS
BOS = 256
MAX_LEN = 512

PRESETS = {
    "tiny": dict(n_layers=4, d_model=64, n_heads=4, d_ff=128),
    "micro": dict(n_layers=2, d_model=32, n_heads=2, d_ff=64),
}


class Block(nn.Module):
    def __init__(self, d_model, n_heads, d_ff):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, batch_first=True)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x, attn_mask):
        h = self.ln1(x)
        attn_out, _ = self.attn(h, h, h, attn_mask=attn_mask, need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.ln2(x))


class TinyCausalLM(nn.Module):
    def __init__(self, model_id: str = "tiny", seed: int = 0):
        super().__init__()
        if model_id not in PRESETS:
            raise ValueError(f"unknown model id {model_id!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[model_id]
        self.model_id = model_id
        self.n_layers = cfg["n_layers"]
        self.d_model = cfg["d_model"]
        self.tok_emb = nn.Embedding(VOCAB_SIZE, cfg["d_model"])
        self.pos_emb = nn.Embedding(MAX_LEN, cfg["d_model"])
        self.blocks = nn.ModuleList(
            Block(cfg["d_model"], cfg["n_heads"], cfg["d_ff"]) for _ in range(cfg["n_layers"])
        )
        self.ln_f = nn.LayerNorm(cfg["d_model"])
        self.head = nn.Linear(cfg["d_model"], VOCAB_SIZE, bias=False)
        self._seed_parameters(seed)

    def _seed_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed & ((1 << 63) - 1))
        with torch.no_grad():
            for p in self.parameters():
                scale = 0.02 if p.dim() >= 2 else 0.0
                if scale:
                    p.copy_(torch.randn(p.shape, generator=gen) * scale)
                else:
                    p.zero_()
            # keep LayerNorm gains at 1 so activations don't collapse
            for module in self.modules():
                if isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (logits, final hidden states), batch_first."""
        n = tokens.shape[-1]
        if n > MAX_LEN:
            raise ValueError(f"sequence of {n} tokens exceeds the {MAX_LEN} limit")
        if tokens.dim() == 1:
            tokens = tokens[None, :]
        pos = torch.arange(n, device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(pos)[None, :, :]
        mask = torch.triu(torch.full((n, n), float("-inf")), diagonal=1)
        for block in self.blocks:
            x = block(x, mask)
        hidden = self.ln_f(x)
        return self.head(hidden), hidden

    def layer_parameters(self, selector: str) -> list[torch.nn.Parameter]:
        """Parameters of the selected transformer block(s), in module order.

        'all' concatenates layer-major; flattening is row-major per tensor.
        """
        if selector == "first":
            blocks = [self.blocks[0]]
        elif selector == "middle":
            blocks = [self.blocks[len(self.blocks) // 2]]
        elif selector == "last":
            blocks = [self.blocks[-1]]
        elif selector == "all":
            blocks = list(self.blocks)
        else:
            raise ValueError(f"unknown layer selector {selector!r}")
        params = []
        for block in blocks:
            params.extend(block.parameters())
        return params


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def build_sequence(image: str, context: str, answer: str, delim: str) -> list[int]:
    """BOS + image bytes + context bytes + delim + answer bytes."""
    return [BOS] + encode(image) + encode(context) + encode(delim) + encode(answer)


def answer_span(tokens: list[int], delim: str) -> tuple[int, int]:
    """Token positions of the answer: everything after the last delimiter."""
    delim_bytes = encode(delim)
    if not delim_bytes:
        raise ValueError("delimiter must be non-empty")
    last = -1
    for i in range(len(tokens) - len(delim_bytes), -1, -1):
        if tokens[i : i + len(delim_bytes)] == delim_bytes:
            last = i
            break
    if last < 0:
        raise ValueError("no delimiter found; cannot locate the answer span")
    start = last + len(delim_bytes)
    if start >= len(tokens):
        raise ValueError("empty answer span")
    return start, len(tokens)
