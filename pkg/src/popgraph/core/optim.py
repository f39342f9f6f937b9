from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from popgraph.core.params import ParamStore


@dataclass
class PolynomialDecay:
    start_lr: float
    end_lr: float
    total_steps: int
    power: float = 1.0

    def __call__(self, step: int) -> float:
        frac = min(step, self.total_steps) / max(self.total_steps, 1)
        return (self.start_lr - self.end_lr) * (1.0 - frac) ** self.power + self.end_lr


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: PolynomialDecay | None = None
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self, step: int | None = None) -> float:
        """Learning rate applied on update number ``step`` (1-based)."""
        s = self.step if step is None else step
        return self.lr_schedule(s) if self.lr_schedule is not None else self.lr


def adam_step(params: ParamStore, state: AdamState, skip_missing: bool = False) -> None:
    """One bias-corrected Adam update; clears gradients afterwards.

    With ``skip_missing`` parameters without a gradient (unused in this step)
    are left untouched instead of raising.
    """
    for name, p in params.items():
        if p.grad is None and not skip_missing:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    lr = state.current_lr(t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
