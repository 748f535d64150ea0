"""Differentiable primitives over :class:`Tensor`.

Every function computes its forward value with numpy and registers a closure
mapping the output adjoint to input adjoints. Layout for image tensors is
NCHW.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .tensor import DimensionError, DomainError, Tensor, as_tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    if np.any(b.data == 0):
        raise DomainError("division by zero")

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return make_result("div", a.data / b.data, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def pow(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a**p`` for a constant exponent."""
    p = float(p)
    if not p.is_integer() and np.any(a.data < 0):
        raise DomainError("fractional power of a negative value")
    if p < 0 and np.any(a.data == 0):
        raise DomainError("negative power of zero")
    out = a.data ** p

    def back(g):
        if p == 0:
            return (np.zeros_like(g),)
        return (g * p * a.data ** (p - 1),)

    return make_result("pow", out, (a,), back)


def square(a: Tensor) -> Tensor:
    return make_result("square", a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("sqrt requires strictly positive input")
    out = np.sqrt(a.data)
    return make_result("sqrt", out, (a,), lambda g: (g / (2 * out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return make_result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def abs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return make_result("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the adjoint is zero where clipping was active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return make_result("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# -- activations ---------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result("leaky_relu", x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return make_result("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


# -- reductions and shape ops --------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result("sum", np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.size // max(np.asarray(out).size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_result("mean", np.asarray(out), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_result("getitem", np.array(a.data[idx]), (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return make_result("matmul", a.data @ b.data, (a, b),
                       lambda g: (g @ b.data.T, a.data.T @ g))


# -- image ops -----------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW input, OIHW weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and weight")
    n, c, h, w = x.shape
    cout, cin, kh, kw = weight.shape
    if c != cin:
        raise DimensionError(f"input has {c} channels, weight expects {cin}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError("kernel larger than padded input")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            # (N, Ho, Wo, C, kh, kw)
            cols = np.tensordot(g, weight.data, axes=([1], [0]))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p:p + h, p:p + w]
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return make_result("conv2d", out, parents, back)


def global_avg_pool(u: Tensor) -> Tensor:
    """Per-channel spatial mean: [N,C,H,W] -> [N,C,1,1]."""
    if u.ndim != 4:
        raise DimensionError("global_avg_pool expects NCHW input")
    hw = u.shape[2] * u.shape[3]
    out = u.data.mean(axis=(2, 3), keepdims=True)
    return make_result("global_avg_pool", out, (u,),
                       lambda g: (np.broadcast_to(g / hw, u.shape).copy(),))


def scale_channels(u: Tensor, s: Tensor) -> Tensor:
    """Multiply each channel of ``u`` by the matching scalar in ``s`` [N,C,1,1]."""
    if u.ndim != 4 or s.shape != (u.shape[0], u.shape[1], 1, 1):
        raise DimensionError(f"gate shape {s.shape} does not match features {u.shape}")

    def back(g):
        return g * s.data, (g * u.data).sum(axis=(2, 3), keepdims=True)

    return make_result("scale_channels", u.data * s.data, (u, s), back)


def concat_channels(ts) -> Tensor:
    ts = list(ts)
    if not ts:
        raise DimensionError("concat_channels needs at least one tensor")
    ref = ts[0].shape
    for t in ts:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise DimensionError(f"cannot concatenate {t.shape} with {ref}")
    offsets = np.cumsum([0] + [t.shape[1] for t in ts])

    def back(g):
        return tuple(g[:, offsets[k]:offsets[k + 1]] for k in range(len(ts)))

    return make_result("concat_channels", np.concatenate([t.data for t in ts], axis=1), ts, back)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    c_out = c // (r * r)
    return a.reshape(n, c_out, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c_out, h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Sub-pixel rearrangement: out[c, r*i+a, r*j+b] = in[c*r*r + a*r + b, i, j]."""
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise DimensionError(f"channels {x.shape[1]} not divisible by r^2={r * r}")
    return make_result("pixel_shuffle", _shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"spatial size {x.shape[2:]} not divisible by {r}")
    return make_result("pixel_unshuffle", _unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k max pooling; ties route the adjoint to the first maximum."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise DimensionError(f"spatial size {(h, w)} not divisible by {k}")
    blocks = x.data.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gb,)

    return make_result("max_pool2d", out, (x,), back)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5):
    """Normalise with batch statistics over (N, H, W); composed from primitives.

    Returns the output and the (mean, biased variance) used, for running stats.
    """
    mu = mean(x, axis=(0, 2, 3), keepdims=True)
    centred = x - mu
    var = mean(square(centred), axis=(0, 2, 3), keepdims=True)
    xhat = centred * pow(var + eps, -0.5)
    c = x.shape[1]
    out = xhat * reshape(gamma, (1, c, 1, 1)) + reshape(beta, (1, c, 1, 1))
    return out, mu.data.reshape(c), var.data.reshape(c)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))
