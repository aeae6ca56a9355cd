"""Forward/backward pairs for the layers the subsample CNN needs.

All functions work on float64 minibatches with the batch on axis 0 and
activations in ``channels x height x width`` order. Each ``*_forward``
returns ``(out, cache)`` and the matching ``*_backward`` takes
``(dout, cache)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import StructuralError

LN_EPS = 1e-5
PROB_FLOOR = 1e-12


def conv_output_size(size: int, filter_size: int, stride: int) -> int:
    return (size - filter_size) // stride + 1


def conv_forward(x, w, b, stride=1):
    """Valid (unpadded) cross-correlation.

    Inputs:
    - x: (N, C, H, W)
    - w: (F, C, D, D)
    - b: (F,)

    Returns (out, cache) with out of shape (N, F, Ho, Wo).
    """
    n, c, h, wd = x.shape
    f, c2, d, d2 = w.shape
    if c != c2 or d != d2:
        raise StructuralError(f"input has {c} channels but filters are {w.shape}")
    ho, wo = conv_output_size(h, d, stride), conv_output_size(wd, d, stride)
    if ho < 1 or wo < 1:
        raise StructuralError(f"input {x.shape[1:]} is smaller than the {d}x{d} filter")
    win = sliding_window_view(x, (d, d), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * d * d)
    out = cols @ w.reshape(f, -1).T + b
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, w, stride)


def conv_backward(dout, cache):
    """Returns (dx, dw, db)."""
    xshape, cols, w, stride = cache
    n, f, ho, wo = dout.shape
    _, c, d, _ = w.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(f, -1)).reshape(n, ho, wo, c, d, d).transpose(0, 3, 1, 2, 4, 5)
    dx = np.zeros(xshape)
    hspan, wspan = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(d):
        for j in range(d):
            dx[:, :, i:i + hspan:stride, j:j + wspan:stride] += dcols[..., i, j]
    return dx, dw, db


def _channel_view(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def layer_norm_forward(x, gain, shift, eps=LN_EPS):
    """Normalize each sample over all of its activations, then apply a
    per-channel gain and shift (channel axis is 1)."""
    axes = tuple(range(1, x.ndim))
    mu = x.mean(axis=axes, keepdims=True)
    var = x.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    g = _channel_view(gain, x.ndim)
    out = g * xhat + _channel_view(shift, x.ndim)
    return out, (xhat, inv, g)


def layer_norm_backward(dout, cache):
    """Returns (dx, dgain, dshift)."""
    xhat, inv, g = cache
    axes = tuple(range(1, dout.ndim))
    red = (0,) + axes[1:]
    m = np.prod(dout.shape[1:])
    dgain = (dout * xhat).sum(axis=red)
    dshift = dout.sum(axis=red)
    dxhat = dout * g
    dx = (inv / m) * (m * dxhat
                      - dxhat.sum(axis=axes, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
    return dx, dgain, dshift


def leaky_relu_forward(x, slope=0.01):
    return np.where(x > 0, x, slope * x), (x, slope)


def leaky_relu_backward(dout, cache):
    x, slope = cache
    return dout * np.where(x > 0, 1.0, slope)


def affine_forward(x, w, b):
    """x: (N, D), w: (D, M), b: (M,)."""
    return x @ w + b, (x, w)


def affine_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, targets):
    """Mean of ``-log p[target]`` with probabilities floored at 1e-12.

    ``targets`` are 0-based class indices.
    """
    probs = np.atleast_2d(probs)
    targets = np.atleast_1d(targets)
    p = probs[np.arange(len(targets)), targets]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def softmax_cross_entropy_backward(probs, targets):
    """Gradient of the mean cross-entropy w.r.t. the logits."""
    d = probs.copy()
    d[np.arange(len(targets)), targets] -= 1.0
    return d / len(targets)


def subsample_extract(a, gamma_h, gamma_w, filter_size=3):
    """Lower-right block of ``floor(gamma_h*P) x floor(gamma_w*Q)`` over the last two axes."""
    p, q = a.shape[-2], a.shape[-1]
    hp, wq = subsample_size(p, q, gamma_h, gamma_w)
    if hp < filter_size or wq < filter_size:
        raise StructuralError(
            f"subsampled region {hp}x{wq} of a {p}x{q} map is smaller than the {filter_size}x{filter_size} filter")
    return a[..., p - hp:, q - wq:].copy()


def subsample_size(p, q, gamma_h, gamma_w):
    if not (0 < gamma_h < 1 and 0 < gamma_w < 1):
        raise StructuralError(f"subsample ratios must lie in (0, 1), got {gamma_h}, {gamma_w}")
    return int(np.floor(gamma_h * p)), int(np.floor(gamma_w * q))
