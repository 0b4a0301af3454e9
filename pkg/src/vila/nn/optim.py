"""AdamW with decoupled weight decay and a linear warmup / linear decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vila.nn.encoder import Params


def schedule(step: int, total_steps: int, warmup_fraction: float) -> float:
    """Learning-rate multiplier for the ``step``-th update (1-based)."""
    if total_steps <= 0:
        return 1.0
    warmup = max(1, int(round(warmup_fraction * total_steps)))
    if step <= warmup:
        return step / warmup
    if total_steps == warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


@dataclass
class OptimState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.05
    total_steps: int = 0
    step: int = 0
    skipped: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def decays(name: str, value: np.ndarray) -> bool:
    # matrices only: no decay on biases, norm gains, or 1-D vectors
    return value.ndim >= 2


def optimizer_step(params: Params, grads: Params, state: OptimState) -> tuple[Params, OptimState]:
    """One AdamW update in place; returns ``(params, state)`` for convenience.

    A step whose gradients contain NaN/inf is skipped and counted.
    """
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        return params, state
    state.step += 1
    t = state.step
    lr = state.lr * schedule(t, state.total_steps, state.warmup_fraction)
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay and decays(name, p):
            p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
