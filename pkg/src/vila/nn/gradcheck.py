"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from vila.nn.encoder import Params


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    worst: str = ""
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def rel_error(ga: float, gn: float) -> float:
    return abs(ga - gn) / max(abs(ga), abs(gn), 1e-8)


def gradcheck(
    loss_fn: Callable[[Params], tuple[float, Params]],
    params: Params,
    sample_count: int = 200,
    epsilon: float = 1e-4,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` with central differences.

    ``loss_fn(params) -> (loss, grads)`` must be deterministic. Samples are
    spread round-robin over tensors so every parameter family is visited;
    within a tensor, entries with a non-zero analytic gradient are preferred.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(params)
    names = sorted(n for n in params if n in grads)
    if not names:
        raise ValueError("loss_fn returned no gradients")
    report = GradCheckReport(0.0, 0)
    order = list(rng.permutation(len(names)))
    for s in range(sample_count):
        name = names[order[s % len(names)]]
        p, g = params[name], grads[name]
        live = np.flatnonzero(g.reshape(-1))
        pool = live if live.size else np.arange(p.size)
        flat_i = int(rng.choice(pool))
        idx = np.unravel_index(flat_i, p.shape)
        old = p[idx]
        p[idx] = old + epsilon
        plus, _ = loss_fn(params)
        p[idx] = old - epsilon
        minus, _ = loss_fn(params)
        p[idx] = old
        numeric = (plus - minus) / (2.0 * epsilon)
        err = rel_error(float(g[idx]), numeric)
        report.checked += 1
        report.per_tensor[name] = max(report.per_tensor.get(name, 0.0), err)
        if err > report.max_rel_error:
            report.max_rel_error = err
            report.worst = f"{name}{list(map(int, idx))}"
    return report
