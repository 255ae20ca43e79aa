"""Differentiable primitives over NCHW arrays.

Convolutions are cross-correlations with zero padding.  Reductions accumulate
in float64 and cast back to the input dtype.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import DimensionError, GeometryError
from .tensor import Tensor, apply, branch

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
BCE_EPS = 1e-7


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _out_size(size, k, stride, padding, what):
    if stride < 1 or padding < 0:
        raise GeometryError(f"{what}: stride must be >= 1 and padding >= 0")
    n = (size + 2 * padding - k) // stride + 1
    if size + 2 * padding < k or n < 1:
        raise GeometryError(
            f"{what}: window {k} does not fit input {size} with padding {padding}"
        )
    return n


def _require_4d(t, what):
    if t.ndim != 4:
        raise DimensionError(f"{what} expects a 4-D (N, C, H, W) tensor, got {t.shape}")


def _pad(a, padding, value=0.0):
    if padding == 0:
        return a
    return np.pad(a, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                  constant_values=value)


def _unpad(a, padding):
    if padding == 0:
        return a
    return a[:, :, padding:-padding, padding:-padding]


# -- convolution ------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0):
    _require_4d(x, "conv2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D, got {weight.shape}")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = _out_size(h, kh, stride, padding, "conv2d")
    wo = _out_size(w, kw, stride, padding, "conv2d")

    if kh == kw == 1 and padding == 0:
        xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
        cols = xs.transpose(0, 2, 3, 1).reshape(n * ho * wo, c)
    else:
        xp = _pad(x.data, padding)
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (gm.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=0, dtype=np.float64).astype(g.dtype) if (
            bias is not None and bias.requires_grad) else None
        gx = None
        if x.requires_grad:
            dcols = gm @ wmat
            if kh == kw == 1 and padding == 0:
                d = dcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
                if stride > 1:
                    gx = np.zeros_like(x.data)
                    gx[:, :, ::stride, ::stride] = d
                else:
                    gx = np.ascontiguousarray(d)
            else:
                dcols = dcols.reshape(n, ho, wo, c, kh, kw)
                gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                            dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                gx = _unpad(gxp, padding)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return apply("conv2d", out, parents, backward)


def depthwise_conv2d(x, weight, stride=1, padding=1):
    """Per-channel convolution; output channel i sees only input channel i."""
    _require_4d(x, "depthwise_conv2d")
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[0] != c or weight.shape[1] != 1:
        raise DimensionError(
            f"depthwise_conv2d: weight {weight.shape} does not match {c} input channels"
        )
    kh, kw = weight.shape[2:]
    ho = _out_size(h, kh, stride, padding, "depthwise_conv2d")
    wo = _out_size(w, kw, stride, padding, "depthwise_conv2d")
    xp = _pad(x.data, padding)
    k = weight.data[:, 0]
    out = np.zeros((n, c, ho, wo), dtype=np.result_type(x.data, k))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] * \
                k[None, :, i, j, None, None]

    def backward(g):
        gw = gxp = None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for i in range(kh):
                for j in range(kw):
                    sl = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
                    gw[:, 0, i, j] = np.einsum("nchw,nchw->c", sl, g)
        if x.requires_grad:
            gxp = np.zeros_like(xp, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        g * k[None, :, i, j, None, None]
            gxp = _unpad(gxp, padding)
        return gxp, gw

    return apply("depthwise_conv2d", out, (x, weight), backward)


def pointwise_conv2d(x, weight):
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise DimensionError(f"pointwise_conv2d expects a (Cout, Cin, 1, 1) weight, got {weight.shape}")
    return conv2d(x, weight, None, stride=1, padding=0)


# -- pooling ----------------------------------------------------------------

def max_pool2d(x, window, stride=None, padding=0):
    _require_4d(x, "max_pool2d")
    stride = stride or window
    n, c, h, w = x.shape
    ho = _out_size(h, window, stride, padding, "max_pool2d")
    wo = _out_size(w, window, stride, padding, "max_pool2d")
    xp = _pad(x.data, padding, value=-np.inf)
    win = sliding_window_view(xp, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo].reshape(n, c, ho, wo, window * window)
    idx = branch(lambda: win.argmax(axis=-1))
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(window):
            for j in range(window):
                hit = idx == i * window + j
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g * hit
        return (_unpad(gxp, padding),)

    return apply("max_pool2d", np.ascontiguousarray(out), (x,), backward)


def avg_pool2d(x, window, stride=None):
    _require_4d(x, "avg_pool2d")
    stride = stride or window
    n, c, h, w = x.shape
    ho = _out_size(h, window, stride, 0, "avg_pool2d")
    wo = _out_size(w, window, stride, 0, "avg_pool2d")
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    out = win[:, :, :ho, :wo].mean(axis=(-2, -1), dtype=np.float64).astype(x.data.dtype)
    scale = 1.0 / (window * window)

    def backward(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        gs = g * scale
        for i in range(window):
            for j in range(window):
                gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gs
        return (gx,)

    return apply("avg_pool2d", out, (x,), backward)


def global_avg_pool(x):
    _require_4d(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.data.dtype)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(g.dtype),)

    return apply("global_avg_pool", out, (x,), backward)


def global_max_pool(x):
    _require_4d(x, "global_max_pool")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = branch(lambda: flat.argmax(axis=-1))
    out = np.take_along_axis(flat, idx[..., None], axis=-1).reshape(n, c, 1, 1)

    def backward(g):
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        np.put_along_axis(gx, idx[..., None], g.reshape(n, c, 1), axis=-1)
        return (gx.reshape(x.shape),)

    return apply("global_max_pool", out, (x,), backward)


def channel_mean(x):
    """Mean over the channel axis, kept as a singleton channel."""
    _require_4d(x, "channel_mean")
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True, dtype=np.float64).astype(x.data.dtype)

    def backward(g):
        return (np.broadcast_to(g / c, x.shape).astype(g.dtype),)

    return apply("channel_mean", out, (x,), backward)


def channel_max(x):
    _require_4d(x, "channel_max")
    idx = branch(lambda: x.data.argmax(axis=1)[:, None])
    out = np.take_along_axis(x.data, idx, axis=1)

    def backward(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return apply("channel_max", out, (x,), backward)


# -- dense and elementwise --------------------------------------------------

def dense(x, weight, bias=None):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"dense: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g.sum(axis=0, dtype=np.float64).astype(g.dtype) if bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return apply("dense", out, parents, backward)


def relu(x):
    mask = branch(lambda: x.data > 0)
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return apply("relu", out, (x,), backward)


def sigmoid(x):
    out = expit(x.data)

    def backward(g):
        return (g * out * (1 - out),)

    return apply("sigmoid", out, (x,), backward)


def add(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"add requires equal shapes, got {a.shape} and {b.shape}")

    def backward(g):
        return g, g

    return apply("add", a.data + b.data, (a, b), backward)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True, dtype=np.float64).astype(g.dtype)


def mul_broadcast(a, b):
    """Elementwise product with broadcasting over singleton dimensions."""
    if a.ndim != b.ndim:
        raise DimensionError(f"mul_broadcast needs equal rank, got {a.shape} and {b.shape}")
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return apply("mul_broadcast", a.data * b.data, (a, b), backward)


def concat_channels(*tensors):
    if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)):
        tensors = tuple(tensors[0])
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise DimensionError(f"concat_channels: {t.shape} incompatible with {ref}")
    sizes = np.cumsum([t.shape[1] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=1)

    def backward(g):
        return tuple(np.split(g, sizes, axis=1))

    return apply("concat_channels", out, tuple(tensors), backward)


def reshape(x, shape):
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return apply("reshape", x.data.reshape(shape), (x,), backward)


def flatten(x):
    return reshape(x, (x.shape[0], -1))


def sum_all(x):
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return apply("sum", out, (x,), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalization.

    In training mode ``running_mean``/``running_var`` (float arrays) are
    updated in place with ``momentum``; in inference they normalize.
    """
    _require_4d(x, "batch_norm")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affine params must have shape ({c},)")
    dtype = x.data.dtype
    if training:
        x64 = x.data.astype(np.float64)
        mean = x64.mean(axis=(0, 2, 3))
        var = x64.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x.data - mean[None, :, None, None].astype(dtype)) *
            inv[None, :, None, None].astype(dtype))
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(dtype) \
            if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(dtype) \
            if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            scale = inv[None, :, None, None].astype(dtype)
            if training:
                m = g.shape[0] * g.shape[2] * g.shape[3]
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True, dtype=np.float64).astype(dtype)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True,
                                        dtype=np.float64).astype(dtype)
                gx = scale * (gxhat - s1 / m - xhat * s2 / m)
            else:
                gx = gxhat * scale
        return gx, gg, gbeta

    return apply("batch_norm", out, (x, gamma, beta), backward)


def bce_loss(pred, target, eps=BCE_EPS):
    """Mean binary cross-entropy of probabilities ``pred`` (N, 1) against 0/1 targets."""
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("bce_loss targets must be 0 or 1")
    p = pred.data.astype(np.float64).reshape(-1)
    if p.shape != y.shape:
        raise DimensionError(f"bce_loss: {p.size} predictions for {y.size} targets")
    pc = np.clip(p, eps, 1 - eps)
    loss = -np.mean(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    inside = (p >= eps) & (p <= 1 - eps)

    def backward(g):
        d = (-y / pc + (1 - y) / (1 - pc)) / y.size * inside
        return ((float(g) * d).reshape(pred.shape).astype(pred.data.dtype),)

    return apply("bce_loss", np.asarray(loss, dtype=pred.data.dtype), (pred,), backward)
