"""Pure-numpy reference implementations of the hot gather/scatter kernels.

These are the fallback path when numba is unavailable or disabled via
LEANCNN_BACKEND=numpy.  The numba twins in kernels_numba.py follow the exact
same accumulation order, so both backends produce bit-identical outputs.

Column layout used throughout: im2col maps x[n, c, oy*stride+ky-pad,
ox*stride+kx-pad] to cols[n, (c*k + ky)*k + kx, oy*wout + ox].
"""

import numpy as np


def conv_out_size(size, k, pad, stride):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, pad, stride):
    """Unroll conv windows of a (N, C, H, W) input into (N, C*k*k, Ho*Wo)."""
    n, c, h, w = x.shape
    ho = conv_out_size(h, k, pad, stride)
    wo = conv_out_size(w, k, pad, stride)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            col[:, :, ky, kx] = x[:, :, ky:ky + stride * ho:stride,
                                  kx:kx + stride * wo:stride]
    return col.reshape(n, c * k * k, ho * wo)


def col2im(cols, h, w, k, pad, stride):
    """Adjoint of im2col: overlapping windows sum back into a (N, C, H, W) image.

    Accumulation order over window offsets is (ky, kx) ascending; the numba
    backend replicates it so float32 sums match bit for bit.
    """
    n = cols.shape[0]
    c = cols.shape[1] // (k * k)
    ho = conv_out_size(h, k, pad, stride)
    wo = conv_out_size(w, k, pad, stride)
    col = cols.reshape(n, c, k, k, ho, wo)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            img[:, :, ky:ky + stride * ho:stride,
                kx:kx + stride * wo:stride] += col[:, :, ky, kx]
    if pad == 0:
        return img
    return np.ascontiguousarray(img[:, :, pad:pad + h, pad:pad + w])


def maxpool2x2(x):
    """2x2/stride-2 max pool.  Returns (y, idx); idx in [0, 4) is the row-major
    in-window offset of the first maximal element (tie-break contract)."""
    n, c, h, w = x.shape
    win = (x.reshape(n, c, h // 2, 2, w // 2, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, h // 2, w // 2, 4))
    idx = win.argmax(axis=4).astype(np.int64)
    y = np.take_along_axis(win, idx[..., None], axis=4)[..., 0]
    return y, idx


def maxpool2x2_backward(dy, idx, h, w):
    """Scatter dy back to the argmax positions recorded by maxpool2x2."""
    n, c, ho, wo = dy.shape
    dwin = np.zeros((n, c, ho, wo, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=4)
    return (dwin.reshape(n, c, ho, wo, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w))
