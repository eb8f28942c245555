"""Direct 2-D convolution with a compiled core and a numpy fallback.

The backend is chosen once at import: the Cython extension if it was
built, otherwise the numpy implementation. ``NETBOOSTER_BACKEND=numpy``
forces the fallback; ``NETBOOSTER_THREADS`` caps the worker count used by
the compiled kernels (default 1).
"""

import os

import numpy as np

from ..errors import ShapeError
from . import _conv_numpy

_forced = os.environ.get("NETBOOSTER_BACKEND", "").strip().lower()
if _forced == "numpy":
    _impl = _conv_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _conv_ext as _impl

        BACKEND = "ext"
    except ImportError:
        if _forced == "ext":
            raise
        _impl = _conv_numpy
        BACKEND = "numpy"


def worker_count():
    raw = os.environ.get("NETBOOSTER_THREADS")
    if not raw:
        return 1
    return max(1, int(raw))


def output_extent(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def check_conv_args(x_shape, k_shape, bias_shape, stride, padding, groups):
    if len(x_shape) != 4:
        raise ShapeError(f"conv input must be N x C x H x W, got shape {tuple(x_shape)}", dim="input.rank")
    if len(k_shape) != 4:
        raise ShapeError(f"conv kernel must be Kh x Kw x Cin x Cout, got shape {tuple(k_shape)}", dim="kernel.rank")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}", dim="stride")
    if padding < 0:
        raise ShapeError(f"padding must be non-negative, got {padding}", dim="padding")
    if groups < 1:
        raise ShapeError(f"groups must be positive, got {groups}", dim="groups")
    _, c, h, w = x_shape
    kh, kw, cg, cout = k_shape
    if c % groups:
        raise ShapeError(f"input channels C_in={c} not divisible by groups={groups}", dim="C_in")
    if cout % groups:
        raise ShapeError(f"output channels C_out={cout} not divisible by groups={groups}", dim="C_out")
    if cg != c // groups:
        raise ShapeError(f"kernel C_in extent {cg} != C_in/groups = {c // groups}", dim="C_in")
    if h + 2 * padding < kh:
        raise ShapeError(f"padded height {h + 2 * padding} smaller than kernel height {kh}", dim="H")
    if w + 2 * padding < kw:
        raise ShapeError(f"padded width {w + 2 * padding} smaller than kernel width {kw}", dim="W")
    if bias_shape is not None and tuple(bias_shape) != (cout,):
        raise ShapeError(f"bias shape {tuple(bias_shape)} != (C_out,) = ({cout},)", dim="C_out")


def _pad(x, padding):
    if padding == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, kernel, bias=None, stride=1, padding=0, groups=1):
    """Direct convolution ``Y[n,o,p,q] = sum_{i,j,m} X[n,m,p*s+i,q*s+j] K[i,j,m,o] (+ b[o])``."""
    check_conv_args(x.shape, kernel.shape, None if bias is None else bias.shape, stride, padding, groups)
    dtype = np.result_type(x.dtype, kernel.dtype)
    xp = _pad(x.astype(dtype, copy=False), padding)
    k = np.ascontiguousarray(kernel, dtype=dtype)
    n, _, h, w = x.shape
    kh, kw, _, cout = k.shape
    out = np.empty((n, cout, output_extent(h, kh, stride, padding), output_extent(w, kw, stride, padding)), dtype=dtype)
    _impl.conv_valid(xp, k, out, stride, groups, worker_count())
    if bias is not None:
        out += bias.astype(dtype, copy=False)[None, :, None, None]
    return out


def conv2d_backward_input(dy, kernel, x_shape, stride=1, padding=0, groups=1):
    n, c, h, w = x_shape
    dtype = dy.dtype
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dtype)
    _impl.conv_valid_grad_input(np.ascontiguousarray(dy), np.ascontiguousarray(kernel, dtype=dtype), dxp,
                                stride, groups, worker_count())
    if padding:
        return dxp[:, :, padding:padding + h, padding:padding + w].copy()
    return dxp


def conv2d_backward_kernel(dy, x, kernel_shape, stride=1, padding=0, groups=1):
    dtype = dy.dtype
    xp = _pad(x.astype(dtype, copy=False), padding)
    chunks = min(worker_count(), dy.shape[0]) if _impl is not _conv_numpy else 1
    partial = np.zeros((chunks,) + tuple(kernel_shape), dtype=dtype)
    _impl.conv_valid_grad_kernel(np.ascontiguousarray(dy), xp, partial, stride, groups, worker_count())
    out = partial[0].copy()
    for t in range(1, chunks):
        out += partial[t]
    return out
