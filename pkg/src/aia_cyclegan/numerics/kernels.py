"""Compiled single-pass loops for the memory-bound parts of the layers.

Matrix products stay on BLAS; these kernels cover the gathers/scatters
around them and the per-channel statistics, which numpy would otherwise
run as several strided passes. Loops are sequential, so results are
bit-reproducible. Channel and plane statistics accumulate in float64.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(x, kh, kw, st, sf, pt, pf, to, fo):
    """Gather ``(B, To, Fo, kh, kw, C)`` patches of ``(B, T, F, C)`` with implicit zero padding."""
    B, T, F, C = x.shape
    cols = np.zeros((B, to, fo, kh, kw, C), dtype=x.dtype)
    for b in range(B):
        for t in range(to):
            for i in range(kh):
                src_t = t * st + i - pt
                if src_t < 0 or src_t >= T:
                    continue
                for f in range(fo):
                    for j in range(kw):
                        src_f = f * sf + j - pf
                        if src_f < 0 or src_f >= F:
                            continue
                        for c in range(C):
                            cols[b, t, f, i, j, c] = x[b, src_t, src_f, c]
    return cols


@njit(cache=True)
def col2im(cols, T, F, st, sf, pt, pf):
    """Scatter-add ``(B, To, Fo, kh, kw, C)`` patches onto a ``(B, T, F, C)`` grid; padding is dropped."""
    B, to, fo, kh, kw, C = cols.shape
    out = np.zeros((B, T, F, C), dtype=cols.dtype)
    for b in range(B):
        for t in range(to):
            for i in range(kh):
                dst_t = t * st + i - pt
                if dst_t < 0 or dst_t >= T:
                    continue
                for f in range(fo):
                    for j in range(kw):
                        dst_f = f * sf + j - pf
                        if dst_f < 0 or dst_f >= F:
                            continue
                        for c in range(C):
                            out[b, dst_t, dst_f, c] += cols[b, t, f, i, j, c]
    return out


@njit(cache=True)
def channel_sums(x2):
    """Column sums of an ``(N, C)`` array with float64 accumulation."""
    N, C = x2.shape
    acc = np.zeros(C, dtype=np.float64)
    for n in range(N):
        for c in range(C):
            acc[c] += x2[n, c]
    return acc.astype(x2.dtype)


@njit(cache=True)
def prelu_forward(x2, slope):
    N, C = x2.shape
    out = np.empty_like(x2)
    for n in range(N):
        for c in range(C):
            v = x2[n, c]
            out[n, c] = v if v >= 0 else slope[c] * v
    return out


@njit(cache=True)
def prelu_backward(x2, slope, g2, need_x):
    N, C = x2.shape
    gx = np.empty_like(g2) if need_x else np.empty((0, C), dtype=g2.dtype)
    ga = np.zeros(C, dtype=np.float64)
    for n in range(N):
        for c in range(C):
            v = x2[n, c]
            gv = g2[n, c]
            if v < 0:
                ga[c] += gv * v
                if need_x:
                    gx[n, c] = gv * slope[c]
            elif need_x:
                gx[n, c] = gv
    return gx, ga.astype(g2.dtype)


@njit(cache=True)
def instance_norm_forward(x3, scale, shift, eps):
    """``x3`` is ``(B, P, C)`` with ``P`` the plane size; returns output, xhat, inverse std."""
    B, P, C = x3.shape
    out = np.empty_like(x3)
    xhat = np.empty_like(x3)
    inv = np.empty((B, C), dtype=x3.dtype)
    for b in range(B):
        mu = np.zeros(C, dtype=np.float64)
        for p in range(P):
            for c in range(C):
                mu[c] += x3[b, p, c]
        mu /= P
        mu_t = mu.astype(x3.dtype)
        var = np.zeros(C, dtype=np.float64)
        for p in range(P):
            for c in range(C):
                d = x3[b, p, c] - mu_t[c]
                var[c] += d * d
        for c in range(C):
            inv[b, c] = 1.0 / np.sqrt(var[c] / P + eps)
        for p in range(P):
            for c in range(C):
                h = (x3[b, p, c] - mu_t[c]) * inv[b, c]
                xhat[b, p, c] = h
                out[b, p, c] = h * scale[c] + shift[c]
    return out, xhat, inv


@njit(cache=True)
def instance_norm_backward(g3, xhat, inv, scale, need_x):
    B, P, C = g3.shape
    gscale = np.zeros(C, dtype=np.float64)
    gshift = np.zeros(C, dtype=np.float64)
    gx = np.empty_like(g3) if need_x else np.empty((0, 0, C), dtype=g3.dtype)
    for b in range(B):
        m1 = np.zeros(C, dtype=np.float64)
        m2 = np.zeros(C, dtype=np.float64)
        for p in range(P):
            for c in range(C):
                gv = g3[b, p, c]
                h = xhat[b, p, c]
                gshift[c] += gv
                gscale[c] += gv * h
                gh = gv * scale[c]
                m1[c] += gh
                m2[c] += gh * h
        if need_x:
            m1_t = (m1 / P).astype(g3.dtype)
            m2_t = (m2 / P).astype(g3.dtype)
            for p in range(P):
                for c in range(C):
                    gx[b, p, c] = inv[b, c] * (g3[b, p, c] * scale[c] - m1_t[c] - xhat[b, p, c] * m2_t[c])
    return gx, gscale.astype(g3.dtype), gshift.astype(g3.dtype)

