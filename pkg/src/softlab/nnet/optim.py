"""Learning-rate schedule and SGD update."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError


def cosine_lr(step: int, total_steps: int, base_lr: float, restart_period: int | None = None) -> float:
    """Cosine annealing from ``base_lr`` to 0, optionally with warm restarts.

    With ``restart_period`` the cosine runs over ``step mod period``.
    """
    if total_steps <= 0:
        raise ValidationError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    if restart_period is None:
        phase = step / total_steps
    else:
        if restart_period <= 0:
            raise ValidationError("restart_period must be positive")
        phase = (step % restart_period) / restart_period
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * phase))


def sgd_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    velocity: list[np.ndarray] | None,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> list[np.ndarray]:
    """Momentum SGD with L2 weight decay coupled into the gradient.

    ``v <- momentum * v + grad + weight_decay * param`` and
    ``param <- param - lr * v``. Parameters are updated in place; the new
    velocity list is returned (pass ``None`` to start from zero).
    """
    if len(params) != len(grads):
        raise ValidationError("parameter and gradient lists differ in length")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ValidationError(f"shape mismatch: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= p.dtype.type(momentum)
        v += g
        if weight_decay:
            v += p.dtype.type(weight_decay) * p
        p -= p.dtype.type(lr) * v
    return velocity
