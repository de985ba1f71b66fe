"""Compiled vs numpy kernels: wall time per call and max output difference.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from rvf.kernels import _fallback

try:
    from rvf.kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x = rng.random((16, 64, 64))
    flow = rng.uniform(-3, 3, (2, 64, 64))
    g = rng.standard_normal((16, 64, 64))
    prev = np.round(rng.random((3, 64, 64)) * 65535).astype(np.int64)
    curr = np.roll(prev, (2, 1), axis=(1, 2))
    return {
        "warp_forward 16x64x64": ("warp_forward", (x, flow)),
        "warp_backward 16x64x64": ("warp_backward", (g, flow)),
        "block_match 64x64 b8 r4": ("block_match", (prev, curr, 8, 4)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; only the fallback is available")
        return
    print(f"{'kernel':<26}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
    for name, (fn, fargs) in cases(np.random.default_rng(0)).items():
        py, cy = getattr(_fallback, fn), getattr(_ckernels, fn)
        t_py = min(timeit.repeat(lambda: py(*fargs), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: cy(*fargs), number=1, repeat=args.repeat)) * 1e3
        diff = float(np.max(np.abs(np.asarray(py(*fargs), dtype=float) - np.asarray(cy(*fargs), dtype=float))))
        print(f"{name:<26}{t_py:>10.3f}{t_cy:>11.3f}{t_py / t_cy:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
