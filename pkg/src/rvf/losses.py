"""Differentiable training losses (Charbonnier and SSIM) on autodiff tensors."""
from __future__ import annotations

import numpy as np

from . import ops
from .diagnostics import LUMA, SSIM_K1, SSIM_K2, gaussian_window, ssim_window_size
from .tensor import Tensor


def charbonnier_loss(ref, out: Tensor, eps: float = 1e-3) -> Tensor:
    diff = ops.sub(out, ref)
    return ops.mean(ops.charbonnier_map(diff, eps))


def _gray(x: Tensor) -> Tensor:
    if x.shape[0] == 3:
        w = Tensor(LUMA.reshape(3, 1, 1), dtype=x.dtype)
        return ops.sum(ops.mul(x, w), axis=0, keepdims=True)
    return x


def ssim_value(ref, out: Tensor) -> Tensor:
    """Mean SSIM with the same window, constants and valid borders as :func:`rvf.diagnostics.ssim`."""
    ref = ref if isinstance(ref, Tensor) else Tensor(np.asarray(ref), dtype=out.dtype)
    x, y = _gray(ref), _gray(out)
    size = ssim_window_size(*x.shape[1:])
    k1d = gaussian_window(size)
    kernel = Tensor(np.outer(k1d, k1d)[None, None], dtype=out.dtype)

    def filt(t):
        return ops.conv2d(t, kernel)

    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = filt(x), filt(y)
    mxx, myy, mxy = ops.mul(mx, mx), ops.mul(my, my), ops.mul(mx, my)
    sxx = ops.sub(filt(ops.mul(x, x)), mxx)
    syy = ops.sub(filt(ops.mul(y, y)), myy)
    sxy = ops.sub(filt(ops.mul(x, y)), mxy)
    num = ops.mul(ops.add(ops.mul(mxy, 2.0), c1), ops.add(ops.mul(sxy, 2.0), c2))
    den = ops.mul(ops.add(ops.add(mxx, myy), c1), ops.add(ops.add(sxx, syy), c2))
    return ops.mean(ops.div(num, den))


def stage1_loss(ref, out: Tensor, ssim_weight: float = 1e-3, eps: float = 1e-3) -> Tensor:
    """Charbonnier + ssim_weight * (1 - SSIM)."""
    return ops.add(charbonnier_loss(ref, out, eps),
                   ops.mul(ops.sub(1.0, ssim_value(ref, out)), ssim_weight))
