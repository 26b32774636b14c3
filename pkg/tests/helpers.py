"""Shared numeric utilities for the test suite."""

import numpy as np


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of the scalar function f at array x.

    f takes no arguments and must read x through the same reference, so the
    in-place perturbation below is visible to it.  x must be float64.
    """
    assert x.dtype == np.float64, "finite differences need float64"
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """max |a-b| / max(1, |a|, |b|), elementwise then reduced."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def layer_gradcheck(layer, x, rng, h=1e-5, reseed=None):
    """Compare a layer's analytic gradients against central differences.

    Uses the scalar loss <w, layer(x)> for a fixed random projection w, so
    dloss/dy = w and backward(w) yields the analytic input and parameter
    gradients.  reseed, when given, restores the layer's internal rng before
    every forward (freezes a dropout mask).  Returns the worst relative
    error over the input and every parameter.
    """
    assert x.dtype == np.float64

    def loss():
        if reseed is not None:
            reseed()
        return float(np.vdot(w, layer.forward(x)))

    if reseed is not None:
        reseed()
    y = layer.forward(x)
    w = rng.standard_normal(y.shape)

    if reseed is not None:
        reseed()
    layer.forward(x)
    dx = layer.backward(w.copy())
    errs = [rel_err(dx, finite_diff_grad(loss, x, h))]
    analytic = {name: g.copy() for name, g in layer.grads()}
    for name, p in layer.params():
        errs.append(rel_err(analytic[name], finite_diff_grad(loss, p, h)))
    return max(errs)


def direct_conv(x, w, b, pad, stride):
    """Naive direct convolution, nested python loops over every index.

    Deliberately written without im2col or matmul so it is an independent
    oracle for the GEMM-based path.  Accumulates in float64.
    """
    n, ci, h, wd = x.shape
    co, ci2, k, k2 = w.shape
    assert ci == ci2 and k == k2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(np.asarray(x, dtype=np.float64),
                ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, co, ho, wo), dtype=np.float64)
    for i in range(n):
        for o in range(co):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for ky in range(k):
                            for kx in range(k):
                                acc += (xp[i, c, oy * stride + ky, ox * stride + kx]
                                        * float(w[o, c, ky, kx]))
                    out[i, o, oy, ox] = acc + float(b[o])
    return out


def separable_image_set(n=16, size=32, seed=0):
    """Alternating dark/bright images, trivially separable by mean level."""
    from leancnn.data import ArrayDataset

    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = np.empty((n, 1, size, size), dtype=np.float32)
    for i, lab in enumerate(labels):
        base = 0.8 if lab else 0.2
        images[i, 0] = np.clip(
            base + 0.05 * rng.standard_normal((size, size)), 0.0, 1.0)
    return ArrayDataset(images, labels, ["dark", "bright"])
