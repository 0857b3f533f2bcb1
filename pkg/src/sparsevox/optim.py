"""SGD with classical (heavy-ball) momentum and per-epoch exponential lr decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SgdState:
    """Hyperparameters plus one velocity buffer per parameter array."""
    lr0: float = 0.002
    momentum: float = 0.99
    decay: float = 0.985
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")


def lr_at_epoch(state: SgdState, epoch: int) -> float:
    """lr0 * decay^epoch."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return state.lr0 * state.decay ** epoch


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray],
             state: SgdState, lr: float) -> None:
    """In-place update: v <- m*v - lr*g; w <- w + v."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(state.velocity) != len(params):
        raise ValueError("velocity buffers do not mirror the parameter list")
    for p, g, v in zip(params, grads, state.velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(
                f"shape mismatch: param {p.shape}, grad {g.shape}, vel {v.shape}")
        v *= state.momentum
        v -= (lr * g).astype(v.dtype, copy=False)
        p += v
