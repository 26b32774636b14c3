"""Adam optimizer over explicit (parameter, gradient) array pairs.

Updates are in place so layers keep their buffer identity; there is no
parameter registry beyond the list handed to the constructor.
"""

import numpy as np

from .errors import ConfigError


class Adam:
    """Adam with bias-corrected first/second moment estimates.

    p -= lr * m_hat / (sqrt(v_hat) + eps), moments kept in the parameter
    dtype.  eps=0 is permitted (it makes the update exactly invariant to
    gradient scaling, which the tests exploit).
    """

    def __init__(self, params_and_grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {lr}")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if eps < 0:
            raise ConfigError(f"eps must be >= 0, got {eps}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.pairs = list(params_and_grads)
        self.m = [np.zeros_like(p) for p, _ in self.pairs]
        self.v = [np.zeros_like(p) for p, _ in self.pairs]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, (p, g) in enumerate(self.pairs):
            m, v = self.m[i], self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)

    def zero_grad(self):
        for _, g in self.pairs:
            g[...] = 0
