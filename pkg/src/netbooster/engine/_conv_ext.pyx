# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-convolution kernels.

All kernels operate on an already zero-padded input and evaluate the
valid, strided correlation directly (no im2col, no FFT). Layouts are
activations N x C x H x W and kernels Kh x Kw x (C_in/groups) x C_out.
Ungrouped convs loop pixel by pixel with the channel contraction
innermost; grouped and depthwise convs, whose per-pixel contraction is
tiny, loop one (input plane, output plane, tap) triple at a time so the
innermost loop walks a contiguous output row.

Batch-level parallelism is deterministic: forward and input-gradient
kernels write disjoint slices per sample, and the kernel gradient is
reduced from fixed per-chunk partial sums in chunk order.
"""

from cython.parallel cimport parallel, prange
from libc.stdlib cimport free, malloc

ctypedef fused real:
    float
    double


cdef void _fwd_planes(real[:, :, :, ::1] x, real[:, :, :, ::1] k, real[:, :, :, ::1] out,
               int stride, int groups, int threads):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t Kh = k.shape[0], Kw = k.shape[1], Cg = k.shape[2], Cout = k.shape[3]
    cdef Py_ssize_t Og = Cout // groups
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t n, p, q, oc, ic, i, j, m, r
    cdef real w
    for n in prange(N, nogil=True, schedule="static", num_threads=threads):
        for oc in range(Cout):
            for p in range(Ho):
                for q in range(Wo):
                    out[n, oc, p, q] = 0
            for m in range(Cg):
                ic = (oc // Og) * Cg + m
                for i in range(Kh):
                    for j in range(Kw):
                        w = k[i, j, m, oc]
                        for p in range(Ho):
                            r = p * stride + i
                            for q in range(Wo):
                                out[n, oc, p, q] += w * x[n, ic, r, q * stride + j]


cdef void _gin_planes(real[:, :, :, ::1] dy, real[:, :, :, ::1] k, real[:, :, :, ::1] dx,
                          int stride, int groups, int threads):
    cdef Py_ssize_t N = dy.shape[0], Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t Kh = k.shape[0], Kw = k.shape[1], Cg = k.shape[2], Cout = k.shape[3]
    cdef Py_ssize_t Og = Cout // groups
    cdef Py_ssize_t n, p, q, oc, ic, i, j, m, r
    cdef real w
    for n in prange(N, nogil=True, schedule="static", num_threads=threads):
        for oc in range(Cout):
            for m in range(Cg):
                ic = (oc // Og) * Cg + m
                for i in range(Kh):
                    for j in range(Kw):
                        w = k[i, j, m, oc]
                        for p in range(Ho):
                            r = p * stride + i
                            for q in range(Wo):
                                dx[n, ic, r, q * stride + j] += w * dy[n, oc, p, q]


cdef void _gk_planes(real[:, :, :, ::1] dy, real[:, :, :, ::1] x, real[:, :, :, :, ::1] partial,
                           int stride, int groups, int threads):
    cdef Py_ssize_t N = dy.shape[0], Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t T = partial.shape[0]
    cdef Py_ssize_t Kh = partial.shape[1], Kw = partial.shape[2], Cg = partial.shape[3], Cout = partial.shape[4]
    cdef Py_ssize_t Og = Cout // groups
    cdef Py_ssize_t t, n, p, q, oc, ic, i, j, m, r
    cdef real s
    for t in prange(T, nogil=True, schedule="static", num_threads=threads):
        for n in range(t * N // T, (t + 1) * N // T):
            for oc in range(Cout):
                for m in range(Cg):
                    ic = (oc // Og) * Cg + m
                    for i in range(Kh):
                        for j in range(Kw):
                            s = 0
                            for p in range(Ho):
                                r = p * stride + i
                                for q in range(Wo):
                                    s = s + dy[n, oc, p, q] * x[n, ic, r, q * stride + j]
                            partial[t, i, j, m, oc] += s

cdef void _fwd_pixels(real[:, :, :, ::1] x, real[:, :, :, ::1] k, real[:, :, :, ::1] out,
                      int stride, int threads):
    cdef Py_ssize_t N = x.shape[0]
    cdef Py_ssize_t Kh = k.shape[0], Kw = k.shape[1], Cin = k.shape[2], Cout = k.shape[3]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t n, p, q, i, j, m, o, r, c
    cdef real xv
    cdef real* acc
    with nogil, parallel(num_threads=threads):
        acc = <real*> malloc(Cout * sizeof(real))
        for n in prange(N, schedule="static"):
            for p in range(Ho):
                for q in range(Wo):
                    for o in range(Cout):
                        acc[o] = 0
                    for i in range(Kh):
                        r = p * stride + i
                        for j in range(Kw):
                            c = q * stride + j
                            for m in range(Cin):
                                xv = x[n, m, r, c]
                                for o in range(Cout):
                                    acc[o] = acc[o] + xv * k[i, j, m, o]
                    for o in range(Cout):
                        out[n, o, p, q] = acc[o]
        free(acc)


cdef void _gin_pixels(real[:, :, :, ::1] dy, real[:, :, :, ::1] k, real[:, :, :, ::1] dx,
                      int stride, int threads):
    cdef Py_ssize_t N = dy.shape[0], Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t Kh = k.shape[0], Kw = k.shape[1], Cin = k.shape[2], Cout = k.shape[3]
    cdef Py_ssize_t n, p, q, i, j, m, o, r, c
    cdef real s
    cdef real* buf
    with nogil, parallel(num_threads=threads):
        buf = <real*> malloc(Cout * sizeof(real))
        for n in prange(N, schedule="static"):
            for p in range(Ho):
                for q in range(Wo):
                    for o in range(Cout):
                        buf[o] = dy[n, o, p, q]
                    for i in range(Kh):
                        r = p * stride + i
                        for j in range(Kw):
                            c = q * stride + j
                            for m in range(Cin):
                                s = 0
                                for o in range(Cout):
                                    s = s + k[i, j, m, o] * buf[o]
                                dx[n, m, r, c] += s
        free(buf)


cdef void _gk_pixels(real[:, :, :, ::1] dy, real[:, :, :, ::1] x, real[:, :, :, :, ::1] partial,
                     int stride, int threads):
    cdef Py_ssize_t N = dy.shape[0], Ho = dy.shape[2], Wo = dy.shape[3]
    cdef Py_ssize_t T = partial.shape[0]
    cdef Py_ssize_t Kh = partial.shape[1], Kw = partial.shape[2], Cin = partial.shape[3], Cout = partial.shape[4]
    cdef Py_ssize_t t, n, p, q, i, j, m, o, r, c
    cdef real xv
    cdef real* buf
    with nogil, parallel(num_threads=threads):
        buf = <real*> malloc(Cout * sizeof(real))
        for t in prange(T, schedule="static"):
            for n in range(t * N // T, (t + 1) * N // T):
                for p in range(Ho):
                    for q in range(Wo):
                        for o in range(Cout):
                            buf[o] = dy[n, o, p, q]
                        for i in range(Kh):
                            r = p * stride + i
                            for j in range(Kw):
                                c = q * stride + j
                                for m in range(Cin):
                                    xv = x[n, m, r, c]
                                    for o in range(Cout):
                                        partial[t, i, j, m, o] += xv * buf[o]
        free(buf)


def conv_valid(real[:, :, :, ::1] x, real[:, :, :, ::1] k, real[:, :, :, ::1] out,
               int stride, int groups, int threads):
    if groups == 1:
        _fwd_pixels(x, k, out, stride, threads)
    else:
        _fwd_planes(x, k, out, stride, groups, threads)


def conv_valid_grad_input(real[:, :, :, ::1] dy, real[:, :, :, ::1] k, real[:, :, :, ::1] dx,
                          int stride, int groups, int threads):
    if groups == 1:
        _gin_pixels(dy, k, dx, stride, threads)
    else:
        _gin_planes(dy, k, dx, stride, groups, threads)


def conv_valid_grad_kernel(real[:, :, :, ::1] dy, real[:, :, :, ::1] x, real[:, :, :, :, ::1] partial,
                           int stride, int groups, int threads):
    """Accumulate kernel gradients into ``partial[chunk]``; caller sums chunks in order."""
    if groups == 1:
        _gk_pixels(dy, x, partial, stride, threads)
    else:
        _gk_planes(dy, x, partial, stride, groups, threads)
