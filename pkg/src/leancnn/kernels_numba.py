"""Numba @njit twins of the kernels in kernels_numpy.py.

Loop orders mirror the numpy slice arithmetic exactly (col2im accumulates in
ascending (ky, kx) per target pixel), so outputs are bit-identical across
backends for the same inputs.  Kernels are single-threaded on purpose: the
engine's determinism contract is bit reproducibility, not peak throughput.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(x, k, pad, stride):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((n, c * k * k, ho * wo), dtype=x.dtype)
    for i in range(n):
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ci * k + ky) * k + kx
                    for oy in range(ho):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        base = oy * wo
                        for ox in range(wo):
                            ix = ox * stride + kx - pad
                            if 0 <= ix < w:
                                out[i, row, base + ox] = x[i, ci, iy, ix]
    return out


@njit(cache=True)
def col2im(cols, h, w, k, pad, stride):
    n = cols.shape[0]
    c = cols.shape[1] // (k * k)
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    img = np.zeros((n, c, h, w), dtype=cols.dtype)
    for i in range(n):
        for ci in range(c):
            for ky in range(k):
                for kx in range(k):
                    row = (ci * k + ky) * k + kx
                    for oy in range(ho):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        base = oy * wo
                        for ox in range(wo):
                            ix = ox * stride + kx - pad
                            if 0 <= ix < w:
                                img[i, ci, iy, ix] += cols[i, row, base + ox]
    return img


@njit(cache=True)
def maxpool2x2(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    for i in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = x[i, ci, 2 * oy, 2 * ox]
                    bidx = 0
                    for wy in range(2):
                        for wx in range(2):
                            v = x[i, ci, 2 * oy + wy, 2 * ox + wx]
                            if v > best:  # strict: first maximum wins ties
                                best = v
                                bidx = wy * 2 + wx
                    y[i, ci, oy, ox] = best
                    idx[i, ci, oy, ox] = bidx
    return y, idx


@njit(cache=True)
def maxpool2x2_backward(dy, idx, h, w):
    n, c, ho, wo = dy.shape
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    for i in range(n):
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    off = idx[i, ci, oy, ox]
                    dx[i, ci, 2 * oy + off // 2, 2 * ox + off % 2] = dy[i, ci, oy, ox]
    return dx
