"""Adam with bias correction, operating on named parameter arrays in place.

Each adversarial player (modality critic, grid discriminator, and the joint
encoder/generator step) owns its own state: first/second moment buffers and
a shared step counter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    """Moment accumulators keyed like the parameter arrays, plus the step
    counter; moments start at zero."""

    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    step: int = 0


def adam_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
) -> None:
    """One Adam update on every array named in `grads`:
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        if name not in arrays:
            raise KeyError(f"gradient for unknown parameter array {name!r}")
        theta = arrays[name]
        if g.shape != theta.shape:
            raise DimensionError(
                f"adam_step: gradient shape {g.shape} does not match parameter {name!r} {theta.shape}"
            )
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(theta), np.zeros_like(theta))
        m, v = state.moments[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        theta -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
