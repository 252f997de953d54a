"""Finite-difference verification of analytic gradients.

The checker probes a handful of random entries per parameter, perturbs each
by +-step, and compares the central difference of the loss against the
gradient left by ``backward``. The loss closure must be deterministic (no
live dropout) and re-runnable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ties.errors import ConfigError
from ties.nn.tensor import Parameter, Tensor

# Relative error denominator floor: keeps near-zero gradient entries from
# amplifying finite-difference noise into spurious failures.
_DENOM_FLOOR = 1e-3


@dataclass(frozen=True)
class GradCheckConfig:
    step: float = 1e-3
    rel_tol: float = 1e-4
    samples: int = 5

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigError(f"finite-difference step must be positive, got {self.step}")
        if self.rel_tol <= 0:
            raise ConfigError(f"rel_tol must be positive, got {self.rel_tol}")


def grad_check(loss_fn: Callable[[], Tensor],
               params: Sequence[Parameter],
               cfg: GradCheckConfig = GradCheckConfig(),
               rng: np.random.Generator | None = None) -> float:
    """Return the max relative error between analytic and numeric gradients."""
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    max_rel = 0.0
    for p, a_grad in zip(params, analytic):
        n_entries = p.value.size
        count = min(cfg.samples, n_entries)
        probes = rng.choice(n_entries, size=count, replace=False)
        for flat in probes:
            i, j = divmod(int(flat), p.cols)
            orig = p.value[i, j]
            p.value[i, j] = orig + cfg.step
            loss_plus = loss_fn().item()
            p.value[i, j] = orig - cfg.step
            loss_minus = loss_fn().item()
            p.value[i, j] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * cfg.step)
            a = a_grad[i, j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), _DENOM_FLOOR)
            max_rel = max(max_rel, rel)
    for p in params:
        p.zero_grad()
    return max_rel
