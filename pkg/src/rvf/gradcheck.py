"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .prng import generator
from .tensor import Tensor

FD_STEP = 1e-3
# relative errors are taken against max(|analytic|, |numeric|, REL_FLOOR) so that
# coordinates with vanishing gradient are judged on absolute error instead
REL_FLOOR = 1e-6


@dataclass
class GradReport:
    rel_errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def frac_within(self) -> float:
        return float(np.mean(self.rel_errors < 1e-3)) if self.rel_errors.size else 1.0

    @property
    def max_error(self) -> float:
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    @property
    def passed(self) -> bool:
        return self.frac_within >= 0.95 and self.max_error < 1e-2

    def __str__(self) -> str:
        return (f"{self.rel_errors.size} coords, {self.frac_within:.1%} below 1e-3, "
                f"max rel err {self.max_error:.2e}")


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = FD_STEP,
                    max_coords: int = 64, seed: int = 0) -> GradReport:
    """Compare ``backward`` gradients of scalar ``fn()`` with central differences.

    ``inputs`` must require grad; run this in float64 storage for meaningful
    results. At most ``max_coords`` coordinates per input are sampled.
    """
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs]

    rng = generator(seed)
    a_vals, n_vals = [], []
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        count = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False) if count < flat.size else np.arange(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            plus = float(fn().data)
            flat[i] = orig - eps
            minus = float(fn().data)
            flat[i] = orig
            n_vals.append((plus - minus) / (2 * eps))
            a_vals.append(grad.reshape(-1)[i])
    a = np.asarray(a_vals)
    n = np.asarray(n_vals)
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
    return GradReport(rel, a, n)


def weighted_sum(out: Tensor, seed: int = 0) -> Tensor:
    """Scalar ``sum(out * r)`` with fixed random weights ``r``; avoids cancellations of plain sums."""
    from . import ops

    r = generator(seed).standard_normal(out.shape)
    return ops.sum(ops.mul(out, Tensor(r, dtype=out.dtype)))
