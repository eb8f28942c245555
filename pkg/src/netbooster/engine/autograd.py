"""Reverse-mode gradient tape over the engine's primitive ops.

Values are plain numpy arrays identified by object identity; the tape
holds a reference to every array it has seen, so identities stay unique
for the lifetime of a step.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import UsageError
from . import ops
from .conv import conv2d_backward_input, conv2d_backward_kernel, conv2d_forward


@dataclass
class _Op:
    name: str
    inputs: tuple
    output: int
    vjp: Callable


class GradientTape:
    def __init__(self):
        self.ops = []
        self._keep = {}
        self._params = {}
        self._outputs = set()

    def __len__(self):
        return len(self.ops)

    def watch(self, key, array):
        """Register ``array`` as a parameter whose gradient is reported under ``key``."""
        self._keep[id(array)] = array
        self._params[id(array)] = key
        return array

    def requires_grad(self, array):
        return array is not None and (id(array) in self._params or id(array) in self._outputs)

    def record(self, name, inputs, output, vjp):
        for a in inputs:
            if a is not None:
                self._keep[id(a)] = a
        self._keep[id(output)] = output
        self._outputs.add(id(output))
        self.ops.append(_Op(name, tuple(None if a is None else id(a) for a in inputs), id(output), vjp))
        return output


def _needs(tape, arrays):
    return tuple(tape.requires_grad(a) for a in arrays)


def backward(tape, loss_grad):
    """Replay ``tape`` in reverse and return ``{param key: gradient}``.

    ``loss_grad`` seeds the gradient of the last recorded output, which
    must be the scalar loss.
    """
    if not tape.ops:
        raise UsageError("backward called on an empty tape")
    grads = {tape.ops[-1].output: np.asarray(loss_grad)}
    for op in reversed(tape.ops):
        g = grads.pop(op.output, None)
        if g is None:
            continue
        for inp, gi in zip(op.inputs, op.vjp(g)):
            if inp is None or gi is None:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    result = {}
    for pid, key in tape._params.items():
        arr = tape._keep[pid]
        result[key] = grads.get(pid, np.zeros_like(arr))
    return result


# taped primitives; with tape=None they are plain forward calls

def conv2d(x, kernel, bias=None, stride=1, padding=0, groups=1, tape=None):
    y = conv2d_forward(x, kernel, bias, stride, padding, groups)
    if tape is None:
        return y
    need_x, need_k, need_b = _needs(tape, (x, kernel, bias))

    def vjp(dy):
        dx = conv2d_backward_input(dy, kernel, x.shape, stride, padding, groups) if need_x else None
        dk = conv2d_backward_kernel(dy, x, kernel.shape, stride, padding, groups) if need_k else None
        db = dy.sum(axis=(0, 2, 3)) if need_b else None
        return dx, dk, db

    return tape.record("conv2d", (x, kernel, bias), y, vjp)


def activation(x, base, alpha, tape=None):
    y = ops.activation_forward(x, base, alpha)
    if tape is None:
        return y
    # alpha is a scheduled constant: no gradient flows to it
    return tape.record(f"act_{base}", (x,), y, lambda dy: (dy * ops.activation_grad(x, base, alpha),))


def affine(x, scale, shift, tape=None):
    y = ops.affine_forward(x, scale, shift)
    if tape is None:
        return y
    return tape.record("affine", (x, scale, shift), y, lambda dy: ops.affine_backward(dy, x, scale))


def dense(x, weight, bias=None, tape=None):
    y = ops.dense_forward(x, weight, bias)
    if tape is None:
        return y

    def vjp(dy):
        return dy @ weight.T, x.T @ dy, (None if bias is None else dy.sum(axis=0))

    return tape.record("dense", (x, weight, bias), y, vjp)


def global_avg_pool(x, tape=None):
    y = ops.global_avg_pool_forward(x)
    if tape is None:
        return y
    return tape.record("pool", (x,), y, lambda dy: (ops.global_avg_pool_backward(dy, x.shape),))


def flatten(x, tape=None):
    y = x.reshape(x.shape[0], -1)
    if tape is None:
        return y
    return tape.record("flatten", (x,), y, lambda dy: (dy.reshape(x.shape),))


def add(a, b, tape=None):
    y = a + b
    if tape is None:
        return y
    return tape.record("add", (a, b), y, lambda dy: (dy, dy))


def cross_entropy(logits, labels, tape=None):
    loss, grad = ops.cross_entropy(logits, labels)
    loss = np.asarray(loss)
    if tape is None:
        return loss
    return tape.record("cross_entropy", (logits,), loss, lambda dl: (grad * dl,))


def total(x, tape=None):
    """Sum of all entries as a 0-d array."""
    y = np.asarray(x.sum())
    if tape is None:
        return y
    return tape.record("sum", (x,), y, lambda dy: (np.broadcast_to(dy, x.shape).astype(x.dtype),))
