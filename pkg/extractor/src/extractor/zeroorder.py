"""Forward-only gradient estimation with central differences over random
Rademacher probes."""

from __future__ import annotations

import math
from typing import Callable

import torch


def zero_order_gradient(
    loss_fn: Callable[[torch.Tensor], float],
    params: torch.Tensor,
    n_probes: int,
    eps: float,
    seed: int = 0,
) -> torch.Tensor:
    """Average of [(loss(w+eps*u) - loss(w-eps*u)) / (2 eps)] * u over
    i.i.d. Rademacher probes u, deterministic given the seed."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    w = params.detach().to(torch.float64)
    gen = torch.Generator().manual_seed(seed & ((1 << 63) - 1))
    estimate = torch.zeros_like(w)
    for probe in range(n_probes):
        u = (torch.randint(0, 2, w.shape, generator=gen, dtype=torch.int8).to(torch.float64) * 2 - 1)
        plus = float(loss_fn(w + eps * u))
        minus = float(loss_fn(w - eps * u))
        if not (math.isfinite(plus) and math.isfinite(minus)):
            raise ValueError(f"non-finite loss at probe {probe}")
        estimate += ((plus - minus) / (2.0 * eps)) * u
    return estimate / n_probes
