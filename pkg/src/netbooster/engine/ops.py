"""Elementwise, per-channel and dense kernels (forward and local gradients)."""

import numpy as np

from ..errors import RangeError, ShapeError


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise RangeError(f"activation slope alpha must lie in [0, 1], got {alpha}")


def prelu_forward(x, alpha):
    """``max(alpha * x, x)``: ReLU at ``alpha=0``, identity at ``alpha=1``."""
    _check_alpha(alpha)
    return np.maximum(x.dtype.type(alpha) * x, x)


def prelu_grad(x, alpha):
    # slope alpha on x <= 0, including the tie at exactly 0
    return np.where(x > 0, x.dtype.type(1), x.dtype.type(alpha))


def relu6_decay_forward(x, alpha):
    """Convex blend ``(1 - alpha) * clamp(x, 0, 6) + alpha * x``."""
    _check_alpha(alpha)
    a = x.dtype.type(alpha)
    return (1 - a) * np.clip(x, 0, 6) + a * x


def relu6_decay_grad(x, alpha):
    a = x.dtype.type(alpha)
    inside = ((x > 0) & (x < 6)).astype(x.dtype)
    return (1 - a) * inside + a


def activation_forward(x, base, alpha):
    if base == "relu":
        return prelu_forward(x, alpha)
    if base == "relu6":
        return relu6_decay_forward(x, alpha)
    raise ValueError(f"unknown activation base {base!r}")


def activation_grad(x, base, alpha):
    if base == "relu":
        return prelu_grad(x, alpha)
    return relu6_decay_grad(x, alpha)


def _channel_view(v, ndim):
    # broadcast a per-channel vector over N x C x ... activations
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def affine_forward(x, scale, shift):
    """Per-channel ``y = scale[c] * x + shift[c]`` on N x C (x H x W) input."""
    c = x.shape[1]
    if scale.shape != (c,):
        raise ShapeError(f"affine scale shape {scale.shape} != (C,) = ({c},)", dim="C")
    if shift.shape != (c,):
        raise ShapeError(f"affine shift shape {shift.shape} != (C,) = ({c},)", dim="C")
    return _channel_view(scale, x.ndim) * x + _channel_view(shift, x.ndim)


def affine_backward(dy, x, scale):
    axes = (0,) + tuple(range(2, x.ndim))
    dx = _channel_view(scale, x.ndim) * dy
    return dx, (dy * x).sum(axis=axes), dy.sum(axis=axes)


def dense_forward(x, weight, bias=None):
    """``y = x @ W (+ b)`` with ``W`` stored in_features x out_features."""
    if x.ndim != 2:
        raise ShapeError(f"dense input must be N x F, got shape {x.shape}", dim="input.rank")
    if weight.shape[0] != x.shape[1]:
        raise ShapeError(f"dense in_features {weight.shape[0]} != input features {x.shape[1]}", dim="in_features")
    y = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense bias shape {bias.shape} != ({weight.shape[1]},)", dim="out_features")
        y = y + bias
    return y


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(dy, x_shape):
    h, w = x_shape[2], x_shape[3]
    return np.broadcast_to(dy / (h * w), x_shape).copy()


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return loss, grad / n
