"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly in semantics. Used when the compiled
extension is unavailable or ``RVF_KERNELS=python`` is set.
"""
import numpy as np


def _sample_grid(flow):
    _, h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w]
    sx = np.clip(xs + flow[0], 0.0, w - 1.0)
    sy = np.clip(ys + flow[1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return x0, y0, x1, y1, sx - x0, sy - y0


def warp_forward(x, flow):
    x0, y0, x1, y1, wx, wy = _sample_grid(flow)
    a = x[:, y0, x0]
    b = x[:, y0, x1]
    c = x[:, y1, x0]
    d = x[:, y1, x1]
    return (1.0 - wy) * ((1.0 - wx) * a + wx * b) + wy * ((1.0 - wx) * c + wx * d)


def warp_backward(g, flow):
    ch, h, w = g.shape
    x0, y0, x1, y1, wx, wy = _sample_grid(flow)
    base = (np.arange(ch) * h * w)[:, None, None]
    out = np.zeros(ch * h * w)
    for yy, xx, weight in ((y0, x0, (1.0 - wy) * (1.0 - wx)), (y0, x1, (1.0 - wy) * wx),
                           (y1, x0, wy * (1.0 - wx)), (y1, x1, wy * wx)):
        idx = base + (yy * w + xx)[None]
        out += np.bincount(idx.ravel(), weights=(g * weight).ravel(), minlength=ch * h * w)
    return out.reshape(ch, h, w)


def candidate_offsets(radius):
    """Displacements ordered by L1 norm, then dy, then dx (the tie-break order)."""
    cands = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    cands.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    return cands


def block_match(prev, curr, block, radius):
    ch, h, w = curr.shape
    padded = np.pad(prev, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    row_starts = np.arange(0, h, block)
    col_starts = np.arange(0, w, block)
    cands = candidate_offsets(radius)
    sads = np.empty((len(cands), len(row_starts), len(col_starts)), dtype=np.int64)
    for k, (dy, dx) in enumerate(cands):
        shifted = padded[:, radius + dy:radius + dy + h, radius + dx:radius + dx + w]
        diff = np.abs(curr - shifted).sum(axis=0)
        sads[k] = np.add.reduceat(np.add.reduceat(diff, row_starts, axis=0), col_starts, axis=1)
    best = np.argmin(sads, axis=0)
    offsets = np.asarray(cands, dtype=np.int64)
    out = np.empty((2, len(row_starts), len(col_starts)), dtype=np.int64)
    out[0] = offsets[best, 1]
    out[1] = offsets[best, 0]
    return out
