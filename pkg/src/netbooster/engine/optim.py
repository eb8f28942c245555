"""SGD with momentum and weight decay, and the cosine learning-rate schedule."""

import math

import numpy as np

from ..errors import RangeError, ShapeError


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=1e-4):
    """Update ``params`` in place and return them.

    ``v <- momentum * v + grad + weight_decay * param``; ``param <- param - lr * v``.
    ``params``, ``grads`` and ``velocity`` are dicts keyed alike; missing
    velocity entries start at zero.
    """
    if lr < 0:
        raise RangeError(f"learning rate must be non-negative, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise RangeError(f"momentum must lie in [0, 1), got {momentum}")
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {key!r} has shape {g.shape}, parameter has {p.shape}", dim=key)
        dt = p.dtype.type
        v = velocity.get(key)
        if v is None:
            v = np.zeros_like(p)
        v = dt(momentum) * v + g.astype(p.dtype, copy=False) + dt(weight_decay) * p
        velocity[key] = v
        p -= dt(lr) * v
    return params


def cosine_lr(step, total_steps, lr_init):
    """``lr_init * 0.5 * (1 + cos(pi * step / total_steps))``."""
    if total_steps < 1:
        raise RangeError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise RangeError(f"step {step} outside [0, {total_steps}]")
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
