"""Measurement instruments: channel-covariance indicator, cosine similarity,
PSNR, SSIM, Charbonnier, and the radial power spectrum.

These operate on plain numpy arrays in float64. Differentiable counterparts
used for training live in :mod:`rvf.losses`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    """Invalid metric input."""


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _check_same(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def to_gray(img) -> np.ndarray:
    """Rec. 601 luma for 3-channel input; 2-D and 1-channel inputs pass through."""
    a = _arr(img)
    if a.ndim == 2:
        return a
    if a.shape[0] == 1:
        return a[0]
    if a.shape[0] == 3:
        return np.tensordot(LUMA, a, axes=1)
    raise MetricError(f"cannot convert shape {a.shape} to grayscale")


# --------------------------------------------------------------------------
# covariance indicator
# --------------------------------------------------------------------------
def covariance_matrix(batch: Sequence) -> np.ndarray:
    """Unbiased C x C covariance of N samples, each C x H x W flattened to C x HW.

    ``Cov = 1/(N-1) sum_n (z_n - mean)(z_n - mean)^T``, contracted over HW.
    """
    z = np.stack([_arr(s) for s in batch])
    if z.shape[0] < 2:
        raise MetricError(f"covariance needs at least 2 samples, got {z.shape[0]}")
    n, c = z.shape[:2]
    # shift by the first sample before centering: identical samples then give exact zeros
    z = z.reshape(n, c, -1)
    z = z - z[:1]
    d = z - z.mean(axis=0, keepdims=True)
    return np.einsum("nch,ndh->cd", d, d) / (n - 1)


def ac_indicator(batch: Sequence, normalized: bool = False) -> float:
    """Mean absolute off-diagonal covariance entry.

    ``normalized=True`` uses the correlation matrix instead, which is
    scale-free (not the raw-covariance definition).
    """
    cov = covariance_matrix(batch)
    c = cov.shape[0]
    if c < 2:
        raise MetricError("ac indicator needs at least 2 channels")
    if normalized:
        std = np.sqrt(np.clip(np.diag(cov), 1e-300, None))
        cov = cov / np.outer(std, std)
    off = ~np.eye(c, dtype=bool)
    return float(np.abs(cov[off]).mean())


# --------------------------------------------------------------------------
# similarity and fidelity metrics
# --------------------------------------------------------------------------
def cosine_similarity(a, b) -> float:
    """<a, b> / (|a| |b|) over flattened values; 0 if either norm is zero, 1 for equal inputs."""
    x, y = _arr(a).ravel(), _arr(b).ravel()
    _check_same(x, y)
    if np.array_equal(x, y) and x.any():
        return 1.0
    mx, my = np.abs(x).max(initial=0.0), np.abs(y).max(initial=0.0)
    if mx == 0 or my == 0:
        return 0.0
    # np.sum instead of BLAS dot/norm: BLAS splits long reductions across
    # threads, which makes the last bits depend on the thread count
    x, y = x / mx, y / my
    nx, ny = np.sqrt(np.sum(x * x)), np.sqrt(np.sum(y * y))
    return float(np.clip(np.sum((x / nx) * (y / ny)), -1.0, 1.0))


def psnr(ref, out) -> float:
    """10 log10(1 / MSE) on the [0, 1] scale; +inf for identical inputs."""
    r, o = _arr(ref), _arr(out)
    _check_same(r, o)
    mse = float(np.mean((r - o) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def ssim_window_size(h: int, w: int) -> int:
    """11, shrunk to the largest odd size that fits small images."""
    size = min(SSIM_WINDOW, h, w)
    return size if size % 2 else size - 1


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    r = (k.size - 1) // 2
    y = correlate1d(correlate1d(x, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")
    return y[r:x.shape[0] - r, r:x.shape[1] - r] if r else y


def ssim_map(ref, out) -> np.ndarray:
    x, y = to_gray(ref), to_gray(out)
    _check_same(x, y)
    k = gaussian_window(ssim_window_size(*x.shape))
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = _filter_valid(x, k), _filter_valid(y, k)
    sxx = _filter_valid(x * x, k) - mx * mx
    syy = _filter_valid(y * y, k) - my * my
    sxy = _filter_valid(x * y, k) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(ref, out) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) of the grayscale images."""
    return float(ssim_map(ref, out).mean())


def charbonnier(ref, out, eps: float = 1e-3) -> float:
    if eps <= 0:
        raise MetricError(f"Charbonnier eps must be positive, got {eps}")
    r, o = _arr(ref), _arr(out)
    _check_same(r, o)
    vals = np.hypot(o - r, eps)
    # mean taken relative to the minimum, so ref == out returns eps exactly
    low = vals.min()
    return float(low + np.mean(vals - low))


METRICS = {"psnr": psnr, "ssim": ssim, "charbonnier": charbonnier}


# --------------------------------------------------------------------------
# radial power spectrum
# --------------------------------------------------------------------------
class RadialSpectrum(NamedTuple):
    power: np.ndarray   # mean |F|^2 per annulus
    counts: np.ndarray  # number of frequencies per annulus
    edges: np.ndarray   # annulus edges in cycles/pixel; the last bin also takes r > 0.5


def radial_bin_index(h: int, w: int, bins: int) -> np.ndarray:
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    r = np.sqrt(fx * fx + fy * fy)
    return np.minimum((r / (0.5 / bins)).astype(np.int64), bins - 1)


def radial_power_spectrum(img, bins: int = 32) -> RadialSpectrum:
    """|DFT|^2 averaged over equal-width annuli from DC to Nyquist.

    Frequencies beyond Nyquist along the diagonal fold into the last bin so
    that ``sum(power * counts)`` is the total spectral energy.
    """
    if bins < 2:
        raise MetricError(f"need at least 2 bins, got {bins}")
    g = to_gray(img)
    spec = np.abs(np.fft.fft2(g)) ** 2
    idx = radial_bin_index(*g.shape, bins).ravel()
    counts = np.bincount(idx, minlength=bins)
    total = np.bincount(idx, weights=spec.ravel(), minlength=bins)
    power = np.divide(total, counts, out=np.zeros(bins), where=counts > 0)
    return RadialSpectrum(power, counts, np.linspace(0.0, 0.5, bins + 1))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------
@dataclass
class MetricReport:
    per_frame: dict = field(default_factory=dict)   # metric -> list of floats

    @property
    def means(self) -> dict:
        return {m: float(np.mean(v)) for m, v in self.per_frame.items()}

    def rows(self, frame_ids: Sequence[str]):
        for m, values in self.per_frame.items():
            for fid, v in zip(frame_ids, values):
                yield fid, m, v


def compute_metrics(refs: Sequence, outs: Sequence, metrics: Sequence[str]) -> MetricReport:
    if len(refs) != len(outs):
        raise MetricError(f"{len(refs)} reference frames vs {len(outs)} outputs")
    report = MetricReport()
    for name in metrics:
        if name not in METRICS:
            raise MetricError(f"unknown metric {name!r}; known: {sorted(METRICS)}")
        report.per_frame[name] = [METRICS[name](r, o) for r, o in zip(refs, outs)]
    return report
