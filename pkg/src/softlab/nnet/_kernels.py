"""Compiled data-movement kernels for 3x3 'same' convolution and 2x2 pooling.

Only copies and scatters live here; all arithmetic that matters (matrix
products, reductions) stays in numpy. Loops run in a fixed order, so the
results are deterministic.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def im2col3x3(x):
    """(B, H, W, C) -> (B, H, W, 3, 3, C) patches with zero padding of one."""
    bsz, h, w, c = x.shape
    cols = np.empty((bsz, h, w, 3, 3, c), dtype=x.dtype)
    for b in range(bsz):
        for i in range(h):
            for dy in range(3):
                yy = i + dy - 1
                for j in range(w):
                    for dx in range(3):
                        xx = j + dx - 1
                        if yy < 0 or yy >= h or xx < 0 or xx >= w:
                            for k in range(c):
                                cols[b, i, j, dy, dx, k] = 0.0
                        else:
                            for k in range(c):
                                cols[b, i, j, dy, dx, k] = x[b, yy, xx, k]
    return cols


@nb.njit(cache=True)
def col2im3x3(dcols):
    """Adjoint of ``im2col3x3``: scatter-add patch gradients back to pixels."""
    bsz, h, w, _, _, c = dcols.shape
    out = np.zeros((bsz, h, w, c), dtype=dcols.dtype)
    for b in range(bsz):
        for i in range(h):
            for dy in range(3):
                yy = i + dy - 1
                if yy < 0 or yy >= h:
                    continue
                for j in range(w):
                    for dx in range(3):
                        xx = j + dx - 1
                        if xx < 0 or xx >= w:
                            continue
                        for k in range(c):
                            out[b, yy, xx, k] += dcols[b, i, j, dy, dx, k]
    return out


@nb.njit(cache=True)
def maxpool2x2(x):
    """2x2/stride-2 max pool; also returns the winning offset (first max wins)."""
    bsz, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((bsz, ho, wo, c), dtype=x.dtype)
    arg = np.empty((bsz, ho, wo, c), dtype=np.uint8)
    for b in range(bsz):
        for i in range(ho):
            for j in range(wo):
                for k in range(c):
                    best = x[b, 2 * i, 2 * j, k]
                    where = 0
                    v = x[b, 2 * i, 2 * j + 1, k]
                    if v > best:
                        best = v
                        where = 1
                    v = x[b, 2 * i + 1, 2 * j, k]
                    if v > best:
                        best = v
                        where = 2
                    v = x[b, 2 * i + 1, 2 * j + 1, k]
                    if v > best:
                        best = v
                        where = 3
                    out[b, i, j, k] = best
                    arg[b, i, j, k] = where
    return out, arg


@nb.njit(cache=True)
def maxpool2x2_backward(d, arg):
    bsz, ho, wo, c = d.shape
    out = np.zeros((bsz, 2 * ho, 2 * wo, c), dtype=d.dtype)
    for b in range(bsz):
        for i in range(ho):
            for j in range(wo):
                for k in range(c):
                    a = arg[b, i, j, k]
                    out[b, 2 * i + a // 2, 2 * j + a % 2, k] = d[b, i, j, k]
    return out
