"""Layer kernels for the graph engine.

All spatial tensors are NHWC. Each kind provides ``shape`` (per-sample shape
inference), ``forward`` (returns output and a cache) and ``backward``
(returns input gradients and weight gradients, in weight order).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ShapeError(ValueError):
    pass


def _out_len(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------- conv2d

def _windows(x, k, stride, pad, fill=0.0):
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)), constant_values=fill)
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # (N, Ho, Wo, C, k, k)
    return win


def _scatter_windows(dwin, x_shape, k, stride, pad):
    """Adjoint of ``_windows``: dwin is (N, Ho, Wo, k, k, C)."""
    n, h, w, c = x_shape
    ho, wo = dwin.shape[1:3]
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dwin.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dwin[:, :, :, i, j, :]
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad, :]
    return dxp


def conv2d_init(p, rng, dtype):
    k, cin, cout = p["k"], p["cin"], p["cout"]
    std = np.sqrt(p.get("gain", 2.0) / (k * k * cin))
    weights = [(rng.standard_normal((k, k, cin, cout)) * std).astype(dtype)]
    if p.get("bias", True):
        weights.append(np.zeros(cout, dtype=dtype))
    return weights


def conv2d_shape(p, shapes):
    (h, w, c), = shapes
    if c != p["cin"]:
        raise ShapeError(f"expected {p['cin']} input channels, got {c}")
    ho, wo = _out_len(h, p["k"], p["stride"], p["pad"]), _out_len(w, p["k"], p["stride"], p["pad"])
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{w} too small for kernel {p['k']}")
    return (ho, wo, p["cout"])


def conv2d_forward(p, weights, xs, training):
    x, = xs
    k, s, pad = p["k"], p["stride"], p["pad"]
    n = x.shape[0]
    if k == 1 and pad == 0:
        xs_ = x[:, ::s, ::s, :] if s > 1 else x
        ho, wo = xs_.shape[1:3]
        cols = xs_.reshape(n * ho * wo, -1)
    else:
        win = _windows(x, k, s, pad)
        ho, wo = win.shape[1:3]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
    wmat = weights[0].reshape(-1, p["cout"])
    out = cols @ wmat
    if len(weights) > 1:
        out += weights[1]
    return out.reshape(n, ho, wo, p["cout"]), (x.shape, cols)


def conv2d_backward(p, weights, cache, dout, need_dx):
    x_shape, cols = cache
    k, s, pad, cout = p["k"], p["stride"], p["pad"], p["cout"]
    n, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    grads = [(cols.T @ d2).reshape(weights[0].shape)]
    if len(weights) > 1:
        grads.append(d2.sum(axis=0))
    dx = None
    if need_dx:
        dcols = d2 @ weights[0].reshape(-1, cout).T
        if k == 1 and pad == 0:
            dsub = dcols.reshape(n, ho, wo, -1)
            if s == 1:
                dx = dsub
            else:
                dx = np.zeros(x_shape, dtype=dout.dtype)
                dx[:, ::s, ::s, :][:, :ho, :wo] = dsub
        else:
            dwin = dcols.reshape(n, ho, wo, k, k, x_shape[3])
            dx = _scatter_windows(dwin, x_shape, k, s, pad)
    return [dx], grads


# ------------------------------------------------------------- batchnorm

def batchnorm_init(p, rng, dtype):
    c = p["channels"]
    return [np.ones(c, dtype=dtype), np.zeros(c, dtype=dtype)]


def batchnorm_buffers(p, dtype):
    c = p["channels"]
    return [np.zeros(c, dtype=dtype), np.ones(c, dtype=dtype)]


def batchnorm_shape(p, shapes):
    (*_, c), = shapes
    if c != p["channels"]:
        raise ShapeError(f"expected {p['channels']} channels, got {c}")
    return shapes[0]


def batchnorm_forward(p, weights, xs, training, buffers):
    x, = xs
    gamma, beta = weights
    axes = tuple(range(x.ndim - 1))
    eps = p.get("eps", BN_EPS)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        mom = p.get("momentum", BN_MOMENTUM)
        m = x.size // x.shape[-1]
        unbiased = var * (m / max(m - 1, 1))
        buffers[0][...] = mom * buffers[0] + (1 - mom) * mean
        buffers[1][...] = mom * buffers[1] + (1 - mom) * unbiased
    else:
        mean, var = buffers
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (xhat, inv, training)


def batchnorm_backward(p, weights, cache, dout, need_dx):
    xhat, inv, training = cache
    gamma = weights[0]
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dx = None
    if need_dx:
        if training:
            m = dout.size // dout.shape[-1]
            dx = (gamma * inv / m) * (m * dout - dbeta - xhat * dgamma)
        else:
            dx = dout * (gamma * inv)
    return [dx], [dgamma, dbeta]


# ------------------------------------------------------------------ relu

def same_shape(p, shapes):
    return shapes[0]


def relu_forward(p, weights, xs, training):
    x, = xs
    mask = x > 0
    return x * mask, mask


def relu_backward(p, weights, mask, dout, need_dx):
    return [dout * mask], []


# --------------------------------------------------------------- pooling

def pool_shape(p, shapes):
    (h, w, c), = shapes
    if p.get("global"):
        return (c,)
    k, s, pad = p["k"], p["stride"], p.get("pad", 0)
    ho, wo = _out_len(h, k, s, pad), _out_len(w, k, s, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{w} too small for pool {k}")
    return (ho, wo, c)


def maxpool_forward(p, weights, xs, training):
    x, = xs
    k, s, pad = p["k"], p["stride"], p.get("pad", 0)
    win = _windows(x, k, s, pad, fill=-np.inf)
    n, ho, wo, c = win.shape[:4]
    flat = win.reshape(n, ho, wo, c, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool_backward(p, weights, cache, dout, need_dx):
    x_shape, arg = cache
    k, s, pad = p["k"], p["stride"], p.get("pad", 0)
    n, h, w, c = x_shape
    ho, wo = dout.shape[1:3]
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += dout * hit
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad, :]
    return [dxp], []


def avgpool_forward(p, weights, xs, training):
    x, = xs
    if p.get("global"):
        return x.mean(axis=(1, 2)), x.shape
    k, s, pad = p["k"], p["stride"], p.get("pad", 0)
    n, h, w, c = x.shape
    if k == s and pad == 0 and h % k == 0 and w % k == 0:
        # explicit slice sums are much faster than a reduce over short strided axes
        rows = x.reshape(n * h // k, k, w * c)
        acc = rows[:, 0].copy()
        for i in range(1, k):
            acc += rows[:, i]
        cols = acc.reshape(n * h // k, w // k, k, c)
        out = cols[:, :, 0].copy()
        for j in range(1, k):
            out += cols[:, :, j]
        out = (out * (1.0 / (k * k))).astype(x.dtype, copy=False).reshape(n, h // k, w // k, c)
    else:
        out = _windows(x, k, s, pad).mean(axis=(4, 5))
    return out, x.shape


def avgpool_backward(p, weights, x_shape, dout, need_dx):
    if not need_dx:
        return [None], []
    n, h, w, c = x_shape
    if p.get("global"):
        dx = np.broadcast_to(dout[:, None, None, :] / (h * w), x_shape).astype(dout.dtype)
        return [dx], []
    k, s, pad = p["k"], p["stride"], p.get("pad", 0)
    if k == s and pad == 0 and h % k == 0 and w % k == 0:
        d = np.repeat(np.repeat(dout, k, axis=1), k, axis=2) / (k * k)
        return [d.astype(dout.dtype, copy=False)], []
    ho, wo = dout.shape[1:3]
    dwin = np.broadcast_to((dout / (k * k))[:, :, :, None, None, :], (n, ho, wo, k, k, c))
    return [_scatter_windows(dwin, x_shape, k, s, pad)], []


# ------------------------------------------------------- concat and add

def concat_shape(p, shapes):
    spatial = {s[:-1] for s in shapes}
    if len(spatial) != 1:
        raise ShapeError(f"concat inputs disagree spatially: {shapes}")
    return shapes[0][:-1] + (sum(s[-1] for s in shapes),)


def concat_forward(p, weights, xs, training):
    return np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs]


def concat_backward(p, weights, widths, dout, need_dx):
    cuts = np.cumsum(widths)[:-1]
    return list(np.split(dout, cuts, axis=-1)), []


def add_shape(p, shapes):
    if len(set(shapes)) != 1:
        raise ShapeError(f"add inputs disagree: {shapes}")
    return shapes[0]


def add_forward(p, weights, xs, training):
    out = xs[0].copy()
    for x in xs[1:]:
        out += x
    return out, len(xs)


def add_backward(p, weights, n_in, dout, need_dx):
    return [dout] * n_in, []


# ------------------------------------------------------ fully connected

def fc_init(p, rng, dtype):
    fin, fout = p["fin"], p["fout"]
    std = p.get("init_std", np.sqrt(1.0 / fin))
    return [(rng.standard_normal((fin, fout)) * std).astype(dtype), np.zeros(fout, dtype=dtype)]


def fc_shape(p, shapes):
    s, = shapes
    if int(np.prod(s)) != p["fin"]:
        raise ShapeError(f"expected {p['fin']} input features, got {s}")
    return (p["fout"],)


def fc_forward(p, weights, xs, training):
    x, = xs
    x2 = x.reshape(x.shape[0], -1)
    return x2 @ weights[0] + weights[1], (x.shape, x2)


def fc_backward(p, weights, cache, dout, need_dx):
    x_shape, x2 = cache
    grads = [x2.T @ dout, dout.sum(axis=0)]
    dx = (dout @ weights[0].T).reshape(x_shape) if need_dx else None
    return [dx], grads


# --------------------------------------------------------------- softmax

def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_forward(p, weights, xs, training):
    y = softmax(xs[0])
    return y, y


def softmax_backward(p, weights, y, dout, need_dx):
    return [y * (dout - (dout * y).sum(axis=-1, keepdims=True))], []


KINDS = {
    "conv2d": dict(init=conv2d_init, shape=conv2d_shape, forward=conv2d_forward, backward=conv2d_backward),
    "batchnorm": dict(init=batchnorm_init, buffers=batchnorm_buffers, shape=batchnorm_shape,
                      forward=batchnorm_forward, backward=batchnorm_backward),
    "relu": dict(shape=same_shape, forward=relu_forward, backward=relu_backward),
    "maxpool": dict(shape=pool_shape, forward=maxpool_forward, backward=maxpool_backward),
    "avgpool": dict(shape=pool_shape, forward=avgpool_forward, backward=avgpool_backward),
    "concat": dict(shape=concat_shape, forward=concat_forward, backward=concat_backward),
    "add": dict(shape=add_shape, forward=add_forward, backward=add_backward),
    "fc": dict(init=fc_init, shape=fc_shape, forward=fc_forward, backward=fc_backward),
    "softmax": dict(shape=same_shape, forward=softmax_forward, backward=softmax_backward),
}


def macs(kind, p, in_shapes, out_shape):
    """Multiply-accumulates for one sample through a node."""
    if kind == "conv2d":
        ho, wo, cout = out_shape
        return ho * wo * cout * p["k"] * p["k"] * p["cin"]
    if kind == "fc":
        return p["fin"] * p["fout"]
    return 0
