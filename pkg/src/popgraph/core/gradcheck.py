from __future__ import annotations

from typing import Callable

import numpy as np

from popgraph.core.params import ParamStore
from popgraph.core.tensor import Tensor, backward


class NondeterminismError(RuntimeError):
    pass


def finite_difference_check(
    fn: Callable[[ParamStore], Tensor],
    params: ParamStore,
    eps: float = 1e-6,
    samples: int = 64,
    seed: int = 0,
) -> float:
    """Max relative error between taped and central-difference gradients.

    ``samples`` coordinates are drawn uniformly over all parameter entries.
    Relative error uses the denominator max(|a|, |b|, 1e-8).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    params.zero_grad()
    loss = fn(params)
    base = loss.item()
    backward(loss)
    again = fn(params).item()
    if again != base:
        raise NondeterminismError(f"fn returned {base!r} then {again!r} for identical parameters")

    names = params.names()
    sizes = np.array([params[n].data.size for n in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(total, size=min(samples, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for fid in np.sort(flat_ids):
        which = int(np.searchsorted(bounds, fid, side="right"))
        local = int(fid - (bounds[which - 1] if which else 0))
        p = params[names[which]]
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[local])
        flat = p.data.reshape(-1)
        orig = flat[local]
        flat[local] = orig + eps
        up = fn(params).item()
        flat[local] = orig - eps
        down = fn(params).item()
        flat[local] = orig
        numeric = (up - down) / (2.0 * eps)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    params.zero_grad()
    return worst
