"""Dense tensor helpers and the numeric kernels the layers build on.

Tensors are plain numpy arrays: row-major, float32 by default, NCHW for
images.  A parallel float64 mode exists solely so finite-difference gradient
checks are meaningful; training and inference always run float32.

Reproducibility contract: randomness flows through numpy's PCG64 generator
(seeded, stream-stable across platforms and numpy releases), kernels are
single-threaded, and matmul delegates to BLAS whose summation order is fixed
for a given build and thread count.  Identical seed and config therefore give
identical results run to run.
"""

import math

import numpy as np

from . import backend
from .errors import ShapeError, ValidationError

Tensor = np.ndarray
DEFAULT_DTYPE = np.float32

# element counts must fit the platform size type
MAX_ELEMENTS = 2**63 - 1


def make_rng(seed):
    """Seeded PCG64 generator; the repo-wide RNG algorithm."""
    return np.random.Generator(np.random.PCG64(seed))


def check_shape(shape):
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ShapeError("empty shape")
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {dims}")
    if math.prod(dims) > MAX_ELEMENTS:
        raise ShapeError(f"element count overflow for shape {dims}")
    return dims


def zeros(shape, dtype=DEFAULT_DTYPE):
    return np.zeros(check_shape(shape), dtype=dtype)


def ones(shape, dtype=DEFAULT_DTYPE):
    return np.ones(check_shape(shape), dtype=dtype)


def uniform(shape, rng, lo=-1.0, hi=1.0, dtype=DEFAULT_DTYPE):
    """Uniform fill on [lo, hi); consumes rng deterministically."""
    if not lo < hi:
        raise ValidationError(f"uniform needs lo < hi, got [{lo}, {hi})")
    dims = check_shape(shape)
    return (lo + (hi - lo) * rng.random(dims)).astype(dtype)


def matmul(a, b):
    """2-D matrix product (M,K) x (K,N) -> (M,N)."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def conv_out_size(size, k, pad, stride):
    """Output extent of a conv/pool window, or ShapeError if not integral."""
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"window k={k} pad={pad} stride={stride} does not tile extent {size}"
        )
    return span // stride + 1


def im2col(x, k, pad=0, stride=1):
    """Unroll (N,C,H,W) conv windows into columns (N, C*k*k, Ho*Wo).

    Column r = (c*k + ky)*k + kx holds input channel c at window offset
    (ky, kx); positions outside the padded image contribute zeros.  A weight
    matrix (Cout, C*k*k) times these columns is the convolution.
    """
    if x.ndim != 4:
        raise ShapeError(f"im2col expects NCHW input, got shape {x.shape}")
    conv_out_size(x.shape[2], k, pad, stride)
    conv_out_size(x.shape[3], k, pad, stride)
    return backend.kernels().im2col(x, k, pad, stride)


def col2im(cols, height, width, k, pad=0, stride=1):
    """Adjoint of im2col: overlapping windows sum back into (N,C,H,W)."""
    if cols.ndim != 3:
        raise ShapeError(f"col2im expects (N, C*k*k, L) columns, got {cols.shape}")
    if cols.shape[1] % (k * k) != 0:
        raise ShapeError(f"column rows {cols.shape[1]} not divisible by k*k={k * k}")
    ho = conv_out_size(height, k, pad, stride)
    wo = conv_out_size(width, k, pad, stride)
    if cols.shape[2] != ho * wo:
        raise ShapeError(
            f"column length {cols.shape[2]} inconsistent with geometry "
            f"{height}x{width} k={k} pad={pad} stride={stride}"
        )
    return backend.kernels().col2im(cols, height, width, k, pad, stride)


def maxpool2x2(x):
    """2x2/stride-2 max pool; returns (y, argmax-offsets). H and W must be even."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects NCHW input, got shape {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool needs even spatial dims, got {x.shape[2]}x{x.shape[3]}")
    return backend.kernels().maxpool2x2(x)


def maxpool2x2_backward(dy, idx, height, width):
    if dy.shape != idx.shape:
        raise ShapeError(f"pool gradient {dy.shape} does not match indices {idx.shape}")
    return backend.kernels().maxpool2x2_backward(dy, idx, height, width)


_REDUCERS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(x, axes=None, mode="sum"):
    """Reduce over the given axes (None = all) with sum, mean, or max."""
    if mode not in _REDUCERS:
        raise ValidationError(f"unknown reduce mode {mode!r}")
    if axes is not None:
        axes = (axes,) if isinstance(axes, int) else tuple(axes)
        for ax in axes:
            if not -x.ndim <= ax < x.ndim:
                raise ShapeError(f"axis {ax} out of range for rank {x.ndim}")
    return _REDUCERS[mode](x, axis=axes)


# elementwise ops: numpy ufuncs already implement the engine semantics
add = np.add
sub = np.subtract
mul = np.multiply
exp = np.exp
log = np.log


def scale(x, alpha):
    return x * x.dtype.type(alpha)


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    """Logistic function, overflow-free for |x| well beyond 100."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=x.dtype if x.dtype.kind == "f" else np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def assert_finite(x, what="tensor"):
    """Debug/test guard for the no-NaN/Inf engine invariant."""
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"non-finite values in {what}")
    return x
