"""Training losses with numerically stable log-domain formulations.

Both losses return (scalar mean loss, gradient w.r.t. logits).  The gradient
already carries the 1/N mean factor, so the optimizer applies it unchanged.
"""

import numpy as np

from .errors import ShapeError, ValidationError


def bce_with_logits(logits, targets):
    """Sigmoid + binary cross entropy fused for stability.

    loss_i = max(z, 0) - z*t + log(1 + exp(-|z|))
    which equals -[t*log(sigmoid(z)) + (1-t)*log(1-sigmoid(z))] but never
    exponentiates a positive argument.  Gradient: (sigmoid(z) - t) / N.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=logits.dtype)
    if logits.shape != targets.shape:
        raise ShapeError(
            f"logits shape {logits.shape} != targets shape {targets.shape}")
    if logits.size == 0:
        raise ValidationError("bce_with_logits got an empty batch")
    if np.any((targets < 0) | (targets > 1)):
        raise ValidationError("binary targets must lie in [0, 1]")
    z = logits
    per = np.maximum(z, 0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    loss = per.mean(dtype=np.float64)
    # stable sigmoid, piecewise in the sign of z
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    grad = (sig - targets) / z.dtype.type(z.size)
    return float(loss), grad


def cross_entropy(logits, labels):
    """Softmax + negative log likelihood over integer class labels.

    logits: (N, C) scores; labels: (N,) ints in [0, C).  Log-sum-exp uses a
    per-row max shift.  Gradient: (softmax(z) - onehot) / N.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, C) logits, got {logits.shape}")
    n, c = logits.shape
    if n == 0:
        raise ValidationError("cross_entropy got an empty batch")
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValidationError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValidationError(
            f"labels must lie in [0, {c}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]")
    zmax = logits.max(axis=1, keepdims=True)
    shifted = logits - zmax
    expz = np.exp(shifted)
    sumexp = expz.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sumexp)
    rows = np.arange(n)
    loss = float(-log_probs[rows, labels].mean(dtype=np.float64))
    grad = expz / sumexp
    grad[rows, labels] -= 1.0
    grad /= logits.dtype.type(n)
    return loss, grad
