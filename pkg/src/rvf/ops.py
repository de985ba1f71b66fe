"""Differentiable operations on :class:`~rvf.tensor.Tensor`.

Every op computes in float64 and casts the result back to the operands'
storage dtype, so reductions and convolution accumulators never run in
single precision. Backward closures receive and return float64 arrays.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from . import kernels
from .tensor import DimensionError, Tensor, as_tensor, make_result

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _out_dtype(*tensors: Tensor):
    # python scalars are lifted as float64 0-d arrays; they must not widen storage
    dts = [t.data.dtype for t in tensors if t.data.ndim > 0 or t.requires_grad]
    if not dts:
        dts = [t.data.dtype for t in tensors]
    return np.result_type(*dts)


def _f64(t: Tensor) -> np.ndarray:
    return t.data.astype(np.float64, copy=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _f64(a) + _f64(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out.astype(_out_dtype(a, b)), (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = _f64(a) - _f64(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out.astype(_out_dtype(a, b)), (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = _f64(a), _f64(b)

    def backward(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return make_result((av * bv).astype(_out_dtype(a, b)), (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = _f64(a), _f64(b)
    out = av / bv

    def backward(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)

    return make_result(out.astype(_out_dtype(a, b)), (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(_f64(x))
    return make_result(out.astype(x.dtype), (x,), lambda g: (g * out,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(_f64(x))
    return make_result(out.astype(x.dtype), (x,), lambda g: (g * 0.5 / out,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * _f64(x)))
    return make_result(out.astype(x.dtype), (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    v = _f64(x)
    cdf = 0.5 * (1.0 + erf(v * _SQRT_HALF))
    out = v * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return (g * (cdf + v * pdf),)

    return make_result(out.astype(x.dtype), (x,), backward)


def relu(x: Tensor) -> Tensor:
    v = _f64(x)
    mask = v > 0
    return make_result((v * mask).astype(x.dtype), (x,), lambda g: (g * mask,))


def charbonnier_map(diff: Tensor, eps: float) -> Tensor:
    """Elementwise sqrt(diff**2 + eps**2), exact at diff == 0."""
    v = _f64(diff)
    out = np.hypot(v, eps)
    return make_result(out.astype(diff.dtype), (diff,), lambda g: (g * v / out,))


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    out = _f64(x).sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return make_result(np.asarray(out).astype(x.dtype), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def amax(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; gradient flows to the first maximal entry."""
    v = _f64(x)
    idx = np.argmax(v, axis=axis)
    out = np.take_along_axis(v, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        gx = np.zeros_like(v)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis=axis)
        return (gx,)

    return make_result(out.astype(x.dtype), (x,), backward)


# --------------------------------------------------------------------------
# shape manipulation
# --------------------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=()) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    out = np.ascontiguousarray(x.data[index])

    def backward(g):
        gx = np.zeros(x.shape, dtype=np.float64)
        if _needs_add_at(index):
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return make_result(out, (x,), backward)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis).astype(_out_dtype(*tensors))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, backward)


def chunk(x: Tensor, n: int, axis: int = 0) -> list:
    if x.shape[axis] % n:
        raise DimensionError(f"cannot split extent {x.shape[axis]} of shape {x.shape} into {n} chunks")
    step = x.shape[axis] // n
    parts = []
    for i in range(n):
        index = [slice(None)] * x.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        parts.append(getitem(x, tuple(index)))
    return parts


def gather(x: Tensor, flat_index: np.ndarray) -> Tensor:
    """``out = x.ravel()[flat_index]``; the output takes ``flat_index``'s shape."""
    flat_index = np.asarray(flat_index, dtype=np.intp)
    out = x.data.reshape(-1)[flat_index]

    def backward(g):
        gx = np.bincount(flat_index.ravel(), weights=g.ravel(), minlength=x.size)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), backward)


def pad2d(x: Tensor, pad, mode: str = "edge") -> Tensor:
    """Pad the two trailing axes. ``pad`` is (top, bottom, left, right)."""
    top, bottom, left, right = pad
    if not any(pad):
        return x
    lead = x.shape[:-2]
    idx = np.arange(x.size).reshape(x.shape)
    width = [(0, 0)] * len(lead) + [(top, bottom), (left, right)]
    idx = np.pad(idx, width, mode=mode)
    return gather(x, idx)


# --------------------------------------------------------------------------
# linear algebra / attention primitives
# --------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = _f64(a), _f64(b)
    out = np.matmul(av, bv)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(out.astype(_out_dtype(a, b)), (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    v = _f64(x)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out.astype(x.dtype), (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    v = _f64(x)
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    out = v / denom

    def backward(g):
        active = norm > eps
        proj = (g * out).sum(axis=axis, keepdims=True)
        return ((g - np.where(active, out * proj, 0.0)) / denom,)

    return make_result(out.astype(x.dtype), (x,), backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-6) -> Tensor:
    """Normalize a C x H x W tensor over channels at every spatial position."""
    if x.ndim != 3:
        raise DimensionError(f"layer_norm expects C x H x W, got {x.shape}")
    v = _f64(x)
    c = v.shape[0]
    mu = v.mean(axis=0, keepdims=True)
    xc = v - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    w = _f64(weight)[:, None, None] if weight is not None else 1.0
    out = xhat * w
    if bias is not None:
        out = out + _f64(bias)[:, None, None]

    def backward(g):
        gxhat = g * w
        gx = inv / c * (c * gxhat - gxhat.sum(axis=0, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=0, keepdims=True))
        gw = (g * xhat).sum(axis=(1, 2)) if weight is not None else None
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = [x, weight if weight is not None else Tensor(0.0),
               bias if bias is not None else Tensor(0.0)]
    return make_result(out.astype(x.dtype), parents, backward)


# --------------------------------------------------------------------------
# convolution family
# --------------------------------------------------------------------------
def _unpad_edge(g: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    if pad == 0:
        return g
    rows = g[:, pad:pad + h, :].copy()
    rows[:, 0, :] += g[:, :pad, :].sum(axis=1)
    rows[:, -1, :] += g[:, pad + h:, :].sum(axis=1)
    out = rows[:, :, pad:pad + w].copy()
    out[:, :, 0] += rows[:, :, :pad].sum(axis=2)
    out[:, :, -1] += rows[:, :, pad + w:].sum(axis=2)
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           pad: int = 0, groups: int = 1) -> Tensor:
    """2-D cross-correlation of a C x H x W tensor with replicate padding.

    ``weight`` has shape (C_out, C_in / groups, kh, kw).
    """
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects C x H x W input and 4-D kernel, got {x.shape}, {weight.shape}")
    cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups or cin // groups != cg:
        raise DimensionError(
            f"conv2d channel/group mismatch: input {x.shape}, kernel {weight.shape}, groups={groups}")
    og = cout // groups
    xp = np.pad(_f64(x), ((0, 0), (pad, pad), (pad, pad)), mode="edge") if pad else _f64(x)
    hp, wp = xp.shape[1:]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # cols: (groups, cg*kh*kw, ho*wo)
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(groups, cg * kh * kw, ho * wo)
    wmat = _f64(weight).reshape(groups, og, cg * kh * kw)
    out = np.matmul(wmat, cols).reshape(cout, ho, wo)
    if bias is not None:
        out = out + _f64(bias)[:, None, None]

    def backward(g):
        gm = g.reshape(groups, og, ho * wo)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).reshape(weight.shape)
        gcols = np.matmul(wmat.transpose(0, 2, 1), gm).reshape(cin, kh, kw, ho, wo)
        gxp = np.zeros((cin, hp, wp))
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
        gx = _unpad_edge(gxp, pad, h, w)
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = [x, weight, bias if bias is not None else Tensor(0.0)]
    return make_result(out.astype(_out_dtype(x, weight)), parents, backward)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Depth-to-space: (s*s*C) x H x W -> C x sH x sW."""
    c2, h, w = x.shape
    if c2 % (s * s):
        raise DimensionError(f"pixel_shuffle: {c2} channels not divisible by {s}^2")
    c = c2 // (s * s)
    y = reshape(x, (c, s, s, h * w))
    y = transpose(y, (0, 3, 1, 2))          # c, h*w, s, s
    y = reshape(y, (c * h, w, s, s))
    y = transpose(y, (0, 2, 1, 3))          # c*h, s, w, s
    return reshape(y, (c, s * h, s * w))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    c, hs, ws = x.shape
    if hs % s or ws % s:
        raise DimensionError(f"pixel_unshuffle: spatial {hs}x{ws} not divisible by {s}")
    h, w = hs // s, ws // s
    y = reshape(x, (c * h, s, w, s))
    y = transpose(y, (0, 2, 1, 3))          # c*h, w, s, s
    y = reshape(y, (c, h * w, s, s))
    y = transpose(y, (0, 2, 3, 1))          # c, s, s, h*w
    return reshape(y, (c * s * s, h, w))


def bilinear_warp(x: Tensor, flow) -> Tensor:
    """Sample ``x`` at p + flow(p) with border clamping.

    ``flow`` is 2 x H x W, channel 0 horizontal, channel 1 vertical. It is
    treated as a constant; gradients flow to ``x`` only.
    """
    flow = np.asarray(flow.data if isinstance(flow, Tensor) else flow, dtype=np.float64)
    if x.ndim != 3 or flow.shape != (2,) + x.shape[1:]:
        raise DimensionError(f"bilinear_warp: input {x.shape} and flow {flow.shape} disagree")
    out = kernels.warp_forward(np.ascontiguousarray(_f64(x)), flow)

    def backward(g):
        return (kernels.warp_backward(np.ascontiguousarray(g), flow),)

    return make_result(out.astype(x.dtype), (x,), backward)
