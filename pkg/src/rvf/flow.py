"""Block-matching optical flow (stand-in for a learned flow network).

Convention: ``curr(p) ~ prev(p + flow(p))``, so ``bilinear_warp(prev, flow)``
aligns ``prev`` (or a hidden state computed on it) with ``curr``.
Channel 0 is the horizontal displacement, channel 1 the vertical one.
"""
from __future__ import annotations

import numpy as np

from . import kernels

BLOCK = 8
RADIUS = 4
# SAD runs on 16-bit fixed-point frames so sums are exact integers and
# tie-breaking is identical across kernel backends
_QUANT = 65535.0


def _quantize(frame) -> np.ndarray:
    a = np.asarray(getattr(frame, "data", frame), dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    return np.ascontiguousarray(np.round(np.clip(a, 0.0, 1.0) * _QUANT).astype(np.int64))


def estimate_flow(prev, curr, block: int = BLOCK, radius: int = RADIUS) -> np.ndarray:
    """Integer per-block displacement minimizing SAD within ``radius``.

    Ties go to the smallest |dx| + |dy| (then smaller dy, then smaller dx),
    so identical or constant frames give zero flow. Each pixel takes the
    displacement of its block.
    """
    p, c = _quantize(prev), _quantize(curr)
    if p.shape != c.shape:
        raise ValueError(f"frame shapes differ: {p.shape} vs {c.shape}")
    h, w = c.shape[1:]
    blocks = kernels.block_match(p, c, block, radius)
    dense = np.repeat(np.repeat(blocks, block, axis=1), block, axis=2)[:, :h, :w]
    return dense.astype(np.float32)
