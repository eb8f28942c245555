"""Brute-force reference implementations used as ground truth in tests.

Nothing here imports the engine. Everything runs in float64 and is kept
deliberately literal: explicit loops over output positions and kernel
taps, out-of-range input indices read as zero.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

EPS = 1e-30
TOLERANCE = {"float64": 1e-12, "float32": 1e-5}


def relative_error(a, b):
    """``max|a - b| / (max|b| + eps)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / (np.max(np.abs(b)) + EPS)) if b.size else 0.0


@dataclass
class OracleReport:
    suite: str
    case: int
    descriptor: dict = field(default_factory=dict)
    dtype: str = "float64"
    max_rel_error: float = 0.0
    tolerance: float = 1e-12
    passed: bool = True

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def oracle_conv(x, kernel, bias=None, stride=1, padding=0, groups=1):
    """``Y[n,o,p,q] = sum_{i,j,m} X[n,m,p*s+i-pad,q*s+j-pad] K[i,j,m,o]``, one output pixel at a time."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    n_, c, h, w = x.shape
    kh, kw, cg, cout = kernel.shape
    assert c == cg * groups and cout % groups == 0
    og = cout // groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    y = np.zeros((n_, cout, ho, wo))
    for n in range(n_):
        for g in range(groups):
            for p in range(ho):
                for q in range(wo):
                    acc = np.zeros(og)
                    for i in range(kh):
                        r = p * stride + i - padding
                        if r < 0 or r >= h:
                            continue
                        for j in range(kw):
                            col = q * stride + j - padding
                            if col < 0 or col >= w:
                                continue
                            xv = x[n, g * cg:(g + 1) * cg, r, col]
                            acc += xv @ kernel[i, j, :, g * og:(g + 1) * og]
                    y[n, g * og:(g + 1) * og, p, q] = acc
    if bias is not None:
        y += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return y


def _oracle_layer(layer, params, x):
    kind = layer.kind
    if kind in ("conv2d", "depthwise_conv2d"):
        return oracle_conv(x, params["weight"], params.get("bias"), layer.stride, layer.padding, layer.groups)
    if kind == "dense":
        w = np.asarray(params["weight"], dtype=np.float64)
        y = np.zeros((x.shape[0], w.shape[1]))
        for n in range(x.shape[0]):
            for o in range(w.shape[1]):
                y[n, o] = sum(x[n, m] * w[m, o] for m in range(w.shape[0]))
        if "bias" in params:
            y += np.asarray(params["bias"], dtype=np.float64)
        return y
    if kind == "affine":
        y = np.empty_like(x)
        for ch in range(x.shape[1]):
            y[:, ch] = float(params["scale"][ch]) * x[:, ch] + float(params["shift"][ch])
        return y
    if kind == "activation":
        a = layer.alpha
        if layer.act == "relu":
            return np.where(a * x > x, a * x, x)
        return (1 - a) * np.minimum(np.maximum(x, 0), 6) + a * x
    raise ValueError(f"oracle_chain cannot apply {kind!r}")


def oracle_chain(layers, x, skip=False):
    """Apply ``[(LayerSpec, params), ...]`` strictly in sequence; empty chain is the identity."""
    x0 = np.asarray(x, dtype=np.float64)
    y = x0
    for layer, params in layers:
        y = _oracle_layer(layer, params, y)
    if skip:
        y = y + x0
    return y


def finite_diff_grad(model, loss_fn, param_id, h=1e-3):
    """Central differences ``(f(theta + h) - f(theta - h)) / 2h`` for every entry of one parameter."""
    theta = model.params[param_id]
    grad = np.zeros(theta.shape, dtype=np.float64)
    flat = theta.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        f_plus = float(loss_fn(model))
        flat[idx] = orig - h
        f_minus = float(loss_fn(model))
        flat[idx] = orig
        out[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def oracle_sgd(param, grads, lr, momentum, weight_decay):
    """Scalar-by-scalar momentum SGD over a sequence of gradients; returns the final parameter."""
    p = np.array(param, dtype=np.float64).reshape(-1)
    v = np.zeros_like(p)
    for g in grads:
        g = np.asarray(g, dtype=np.float64).reshape(-1)
        for i in range(p.size):
            v[i] = momentum * v[i] + g[i] + weight_decay * p[i]
            p[i] = p[i] - lr * v[i]
    return p.reshape(np.shape(param))
