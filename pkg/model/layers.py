"""Forward/backward primitives for the multiscale CNN.

Every forward returns (out, cache); every backward takes (dout, cache).
Convolutions are "same" convolutions over 2 or 3 spatial axes with odd
kernels: x (N, C, *S), w (F, C, *K), b (F,).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _spatial(x):
    return tuple(range(2, x.ndim))


def conv_forward(x, w, b):
    s = x.ndim - 2
    kernel = w.shape[2:]
    if any(k % 2 == 0 for k in kernel):
        raise ValueError(f"same convolution needs odd kernels, got {kernel}")
    pads = [(0, 0), (0, 0)] + [(k // 2, k // 2) for k in kernel]
    xp = np.pad(x, pads)
    windows = sliding_window_view(xp, kernel, axis=_spatial(x))
    # windows: (N, C, *S, *K)
    out = np.tensordot(windows, w, axes=([1] + list(range(2 + s, 2 + 2 * s)), [1] + list(range(2, 2 + s))))
    out = np.moveaxis(out, -1, 1) + b.reshape((1, -1) + (1,) * s)
    return out, (x, w)


def conv_backward(dout, cache):
    x, w = cache
    s = x.ndim - 2
    kernel = w.shape[2:]
    pads = [(0, 0), (0, 0)] + [(k // 2, k // 2) for k in kernel]
    windows = sliding_window_view(np.pad(x, pads), kernel, axis=_spatial(x))
    axes = [0] + list(range(2, 2 + s))
    dw = np.tensordot(dout, windows, axes=(axes, axes))
    db = dout.sum(axis=tuple(axes))
    # gradient wrt x is a same convolution of dout with the flipped kernel
    w_flip = np.flip(w, axis=tuple(range(2, 2 + s))).swapaxes(0, 1)
    dx, _ = conv_forward(dout, w_flip, np.zeros(w.shape[1]))
    return dx, dw, db


def pool_extent(size, pool):
    """Pool kernel clipped to the available extent; output = floor(size / k), at least 1."""
    k = min(pool, size)
    return k, max(1, size // k)


def maxpool_forward(x, pool):
    n, c = x.shape[:2]
    sizes = x.shape[2:]
    s = len(sizes)
    kernels, outs = zip(*(pool_extent(d, p) for d, p in zip(sizes, pool)))
    crop = x[(slice(None), slice(None)) + tuple(slice(0, o * k) for o, k in zip(outs, kernels))]
    split = (n, c) + tuple(v for pair in zip(outs, kernels) for v in pair)
    order = (0, 1) + tuple(2 + 2 * i for i in range(s)) + tuple(3 + 2 * i for i in range(s))
    grouped = crop.reshape(split).transpose(order).reshape((n, c) + outs + (-1,))
    idx = grouped.argmax(axis=-1)
    out = np.take_along_axis(grouped, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, kernels, outs, idx)


def maxpool_backward(dout, cache):
    shape, kernels, outs, idx = cache
    n, c = shape[:2]
    s = len(kernels)
    routed = np.zeros((n, c) + outs + (int(np.prod(kernels)),))
    np.put_along_axis(routed, idx[..., None], dout[..., None], axis=-1)
    routed = routed.reshape((n, c) + outs + kernels)
    interleave = (0, 1) + tuple(v for i in range(s) for v in (2 + i, 2 + s + i))
    routed = routed.transpose(interleave).reshape((n, c) + tuple(o * k for o, k in zip(outs, kernels)))
    dx = np.zeros(shape)
    dx[(slice(None), slice(None)) + tuple(slice(0, o * k) for o, k in zip(outs, kernels))] = routed
    return dx


def affine_forward(x, w, b):
    flat = x.reshape(x.shape[0], -1)
    return flat @ w + b, (x, w)


def affine_backward(dout, cache):
    x, w = cache
    dx = (dout @ w.T).reshape(x.shape)
    dw = x.reshape(x.shape[0], -1).T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


def relu_forward(x):
    return np.maximum(0, x), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
