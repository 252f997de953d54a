"""Gradient clipping and the Adam update."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ties.errors import ConfigError
from ties.nn.tensor import Parameter


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm. Applying it twice equals applying it once.
    """
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad *= factor
    return norm


def adam_step(param: Parameter, lr: float,
              betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; zeroes the gradient afterwards.

    Frozen rows have their gradient cleared first, so their value and moment
    estimates never move. An all-zero gradient is a complete no-op regardless
    of accumulated moment state: nothing was learned from the batch, so the
    value must not drift on stale momentum.
    """
    b1, b2 = betas
    for row in param.frozen_rows:
        param.grad[row, :] = 0.0
    if not np.any(param.grad):
        return
    param.step_count += 1
    t = param.step_count
    param.adam_m = b1 * param.adam_m + (1.0 - b1) * param.grad
    param.adam_v = b2 * param.adam_v + (1.0 - b2) * param.grad * param.grad
    m_hat = param.adam_m / (1.0 - b1 ** t)
    v_hat = param.adam_v / (1.0 - b2 ** t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.grad[:] = 0.0
