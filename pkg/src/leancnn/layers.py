"""Forward/backward implementations of the layer kinds the models use.

Each layer caches whatever its backward pass needs while training; in eval
mode forward performs no state writes at all, so a model in eval mode can be
shared read-only across threads.  Backward passes are hand-derived (no
autograd tape) and are validated against central finite differences in the
test suite.
"""

import numpy as np

from . import tensor
from .errors import ConfigError, ShapeError

KAIMING_GAIN = np.sqrt(2.0)  # ReLU networks

# eval-mode convs process at most this many samples per GEMM to bound the
# size of the transient im2col buffer (batch 128 at 224x224 would otherwise
# materialize >1.5 GB at conv2)
EVAL_CONV_CHUNK = 16


def _kaiming_uniform(shape, fan_in, rng, dtype):
    bound = KAIMING_GAIN * np.sqrt(3.0 / fan_in)
    return tensor.uniform(shape, rng, -bound, bound, dtype=dtype)


class Layer:
    """Base: parameterless, stateless in eval mode."""

    training = True

    def set_mode(self, training):
        self.training = bool(training)

    def params(self):
        """list of (name, array) learnable parameters."""
        return []

    def grads(self):
        """list of (name, array) gradient buffers aligned with params()."""
        return []

    def state(self):
        """params() plus non-learnable persistent state (BN running stats)."""
        return self.params()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    """3x3-style convolution via im2col + GEMM."""

    def __init__(self, in_channels, out_channels, kernel_size=3, padding=1,
                 stride=1, rng=None, dtype=tensor.DEFAULT_DTYPE):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        self.stride = stride
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = _kaiming_uniform(
            (out_channels, in_channels, kernel_size, kernel_size), fan_in, rng, dtype)
        self.bias = tensor.zeros((out_channels,), dtype=dtype)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self._cols = None
        self._in_shape = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grads(self):
        return [("weight", self.dweight), ("bias", self.dbias)]

    def _gemm(self, cols, n, ho, wo):
        w2 = self.weight.reshape(self.out_channels, -1)
        y = np.matmul(w2, cols) + self.bias[:, None]
        return y.reshape(n, self.out_channels, ho, wo)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} input channels, got {c}")
        k, p, s = self.kernel_size, self.padding, self.stride
        ho = tensor.conv_out_size(h, k, p, s)
        wo = tensor.conv_out_size(w, k, p, s)
        if self.training:
            cols = tensor.im2col(x, k, p, s)
            self._cols = cols
            self._in_shape = x.shape
            return self._gemm(cols, n, ho, wo)
        if n <= EVAL_CONV_CHUNK:
            return self._gemm(tensor.im2col(x, k, p, s), n, ho, wo)
        out = np.empty((n, self.out_channels, ho, wo), dtype=x.dtype)
        for lo in range(0, n, EVAL_CONV_CHUNK):
            hi = min(lo + EVAL_CONV_CHUNK, n)
            chunk = x[lo:hi]
            out[lo:hi] = self._gemm(tensor.im2col(chunk, k, p, s), hi - lo, ho, wo)
        return out

    def backward(self, dy):
        if self._cols is None:
            raise ShapeError("conv backward called before a training-mode forward")
        n, _, ho, wo = dy.shape
        k, p, s = self.kernel_size, self.padding, self.stride
        dy2 = dy.reshape(n, self.out_channels, ho * wo)
        self.dweight[:] = np.tensordot(dy2, self._cols, axes=([0, 2], [0, 2])) \
            .reshape(self.weight.shape)
        self.dbias[:] = dy2.sum(axis=(0, 2))
        w2 = self.weight.reshape(self.out_channels, -1)
        dcols = np.matmul(w2.T, dy2)
        _, _, h, w = self._in_shape
        return tensor.col2im(dcols, h, w, k, p, s)


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (N, H, W).

    Train mode normalizes by biased batch statistics and folds the unbiased
    variance into the running stats (running <- (1-m)*running + m*batch).
    Eval mode normalizes by the running stats only.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=tensor.DEFAULT_DTYPE):
        if eps <= 0:
            raise ConfigError(f"batchnorm eps must be > 0, got {eps}")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = tensor.ones((channels,), dtype=dtype)
        self.beta = tensor.zeros((channels,), dtype=dtype)
        self.running_mean = tensor.zeros((channels,), dtype=dtype)
        self.running_var = tensor.ones((channels,), dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self._xhat = None
        self._inv_std = None
        self._n = 0

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grads(self):
        return [("gamma", self.dgamma), ("beta", self.dbeta)]

    def state(self):
        return self.params() + [("running_mean", self.running_mean),
                                ("running_var", self.running_var)]

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm over {self.channels} channels got shape {x.shape}")
        if self.training:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            if n < 2:
                raise ConfigError(
                    "batchnorm train mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))  # biased, used for normalization
            m = self.momentum
            self.running_mean[:] = (1 - m) * self.running_mean + m * mean
            self.running_var[:] = (1 - m) * self.running_var + m * (var * n / (n - 1))
            inv = 1.0 / np.sqrt(var + x.dtype.type(self.eps))
            xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
            self._xhat = xhat
            self._inv_std = inv
            self._n = n
        else:
            inv = 1.0 / np.sqrt(self.running_var + x.dtype.type(self.eps))
            xhat = (x - self.running_mean[None, :, None, None]) * inv[None, :, None, None]
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dy):
        if self._xhat is None:
            raise ShapeError("batchnorm backward called before a training-mode forward")
        xhat = self._xhat
        self.dgamma[:] = (dy * xhat).sum(axis=(0, 2, 3))
        self.dbeta[:] = dy.sum(axis=(0, 2, 3))
        dxhat = dy * self.gamma[None, :, None, None]
        mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return self._inv_std[None, :, None, None] * (
            dxhat - mean_dxhat - xhat * mean_dxhat_xhat)


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x):
        if self.training:
            self._mask = x > 0
            return x * self._mask
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool2x2(Layer):
    """2x2 window, stride 2; gradient routed to the first maximal element."""

    def __init__(self):
        self._idx = None
        self._in_hw = None

    def forward(self, x):
        y, idx = tensor.maxpool2x2(x)
        if self.training:
            self._idx = idx
            self._in_hw = (x.shape[2], x.shape[3])
        return y

    def backward(self, dy):
        h, w = self._in_hw
        return tensor.maxpool2x2_backward(dy, self._idx, h, w)


class Flatten(Layer):
    def __init__(self):
        self._in_shape = None

    def forward(self, x):
        if self.training:
            self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=tensor.DEFAULT_DTYPE):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = _kaiming_uniform((out_features, in_features), in_features, rng, dtype)
        self.bias = tensor.zeros((out_features,), dtype=dtype)
        self.dweight = np.zeros_like(self.weight)
        self.dbias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grads(self):
        return [("weight", self.dweight), ("bias", self.dbias)]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"dense expects (N, {self.in_features}) input, got {x.shape}")
        if self.training:
            self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dy):
        self.dweight[:] = dy.T @ self._x
        self.dbias[:] = dy.sum(axis=0)
        return dy @ self.weight


class Dropout(Layer):
    """Inverted dropout: scales survivors by 1/(1-rate) so eval is identity."""

    def __init__(self, rate, rng=None):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            return x
        if self.rng is None:
            raise ConfigError("dropout train mode requires an rng")
        keep = (self.rng.random(x.shape) >= self.rate)
        self._mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        return dy * self._mask
