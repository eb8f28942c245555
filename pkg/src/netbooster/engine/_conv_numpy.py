"""Pure-numpy fallback for the direct-convolution kernels.

Same contract as the compiled ``_conv_ext`` module: inputs are already
zero-padded, the correlation is valid and strided, and results are
written into caller-provided output arrays. The sum over kernel taps is
evaluated tap by tap; each tap is a channel contraction over every
output position at once.
"""

import numpy as np


def _tap(x, i, j, stride, ho, wo):
    return x[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _grouped(kernel_tap, groups):
    # (Cg, Cout) -> (G, Cg, Og)
    cg, cout = kernel_tap.shape
    return kernel_tap.reshape(cg, groups, cout // groups).transpose(1, 0, 2)


def conv_valid(x, k, out, stride, groups, threads=1):
    n, c, _, _ = x.shape
    kh, kw, cg, cout = k.shape
    ho, wo = out.shape[2:]
    acc = np.zeros((n, groups, cout // groups, ho, wo), dtype=out.dtype)
    for i in range(kh):
        for j in range(kw):
            xs = _tap(x, i, j, stride, ho, wo).reshape(n, groups, cg, ho, wo)
            acc += np.einsum("ngmhw,gmo->ngohw", xs, _grouped(k[i, j], groups))
    out[...] = acc.reshape(n, cout, ho, wo)


def conv_valid_grad_input(dy, k, dx, stride, groups, threads=1):
    n, cout, ho, wo = dy.shape
    kh, kw, cg, _ = k.shape
    dyg = dy.reshape(n, groups, cout // groups, ho, wo)
    for i in range(kh):
        for j in range(kw):
            contrib = np.einsum("ngohw,gmo->ngmhw", dyg, _grouped(k[i, j], groups))
            _tap(dx, i, j, stride, ho, wo)[...] += contrib.reshape(n, groups * cg, ho, wo)


def conv_valid_grad_kernel(dy, x, partial, stride, groups, threads=1):
    n, cout, ho, wo = dy.shape
    _, kh, kw, cg, _ = partial.shape
    dyg = dy.reshape(n, groups, cout // groups, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xs = _tap(x, i, j, stride, ho, wo).reshape(n, groups, cg, ho, wo)
            g = np.einsum("ngmhw,ngohw->gmo", xs, dyg)
            partial[0, i, j] += g.transpose(1, 0, 2).reshape(cg, cout)
