"""Seed-deterministic synthetic degradations: blur, noise, JPEG-like compression, resizing.

Images are ``3 x H x W`` (or ``H x W``) arrays in [0, 1]. Every function is
pure; noise comes from the counter-based stream in :mod:`rvf.prng`, so the
same (spec, seed) reproduces identical bits in any process.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.ndimage import correlate1d

from . import prng

KINDS = ("identity", "blur", "noise", "jpeg", "resize", "pipeline")

BLUR_RANGE = (0.2, 3.0)
NOISE_RANGE = (0.0, 0.1)
JPEG_RANGE = (30, 95)

# ITU T.81 Annex K tables
_LUMA_Q = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99]], dtype=np.float64)
_CHROMA_Q = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99]], dtype=np.float64)

_RGB_TO_YCC = np.array([[0.299, 0.587, 0.114],
                        [-0.168736, -0.331264, 0.5],
                        [0.5, -0.418688, -0.081312]])
_YCC_TO_RGB = np.array([[1.0, 0.0, 1.402],
                        [1.0, -0.344136, -0.714136],
                        [1.0, 1.772, 0.0]])


class DegradationError(ValueError):
    """Invalid degradation parameter."""


@dataclass
class DegradationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DegradationError(f"unknown degradation kind {self.kind!r}; expected one of {KINDS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.kind == "pipeline":
            d["params"] = {"stages": [s.to_dict() for s in self.params["stages"]]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        params = dict(d.get("params", {}))
        if d["kind"] == "pipeline":
            params["stages"] = [cls.from_dict(s) for s in params["stages"]]
        return cls(d["kind"], params, int(d.get("seed", 0)))


def _as_array(img) -> np.ndarray:
    return np.asarray(getattr(img, "data", img))


# --------------------------------------------------------------------------
# blur
# --------------------------------------------------------------------------
def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma < 0:
        raise DegradationError(f"blur sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1)
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):  # subnormal sigma: off-center taps underflow to 0
        k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicate borders; sigma 0 is the identity."""
    arr = _as_array(img)
    k = gaussian_kernel(sigma)
    if k.size == 1:
        return arr.copy()
    out = arr.astype(np.float64)
    out = correlate1d(out, k, axis=-1, mode="nearest")
    out = correlate1d(out, k, axis=-2, mode="nearest")
    return out.astype(arr.dtype)


# --------------------------------------------------------------------------
# noise
# --------------------------------------------------------------------------
def add_gaussian_noise(img, sigma: float, seed: int) -> np.ndarray:
    arr = _as_array(img)
    if sigma < 0:
        raise DegradationError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return arr.copy()
    noisy = arr.astype(np.float64) + sigma * prng.normal(seed, arr.shape)
    return np.clip(noisy, 0.0, 1.0).astype(arr.dtype)


# --------------------------------------------------------------------------
# JPEG-like compression
# --------------------------------------------------------------------------
def quality_tables(quality: int):
    """Luma and chroma quantization tables scaled by the libjpeg quality law."""
    if not 1 <= quality <= 100:
        raise DegradationError(f"JPEG quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    tables = []
    for base in (_LUMA_Q, _CHROMA_Q):
        t = np.floor((base * scale + 50.0) / 100.0)
        tables.append(np.clip(t, 1.0, 255.0))
    return tables[0], tables[1]


def jpeg_like_compress(img, quality: int) -> np.ndarray:
    """Baseline-JPEG round trip (4:4:4, no entropy coding) on an RGB or gray image."""
    arr = _as_array(img)
    luma_q, chroma_q = quality_tables(int(quality))
    gray = arr.ndim == 2
    rgb = arr[None] if gray else arr
    if rgb.shape[0] not in (1, 3):
        raise DegradationError(f"JPEG expects 1 or 3 channels, got shape {arr.shape}")
    x = np.round(np.clip(rgb.astype(np.float64), 0.0, 1.0) * 255.0)
    if rgb.shape[0] == 3:
        ycc = np.tensordot(_RGB_TO_YCC, x, axes=1)
        ycc[1:] += 128.0
        tables = (luma_q, chroma_q, chroma_q)
    else:
        ycc = x
        tables = (luma_q,)
    h, w = ycc.shape[1:]
    ph, pw = (-h) % 8, (-w) % 8
    ycc = np.pad(ycc, ((0, 0), (0, ph), (0, pw)), mode="edge") - 128.0
    hb, wb = ycc.shape[1] // 8, ycc.shape[2] // 8
    blocks = ycc.reshape(len(tables), hb, 8, wb, 8).transpose(0, 1, 3, 2, 4)
    coef = sfft.dctn(blocks, axes=(-2, -1), norm="ortho")
    q = np.stack(tables)[:, None, None]
    coef = np.round(coef / q) * q
    rec = sfft.idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(len(tables), hb * 8, wb * 8)[:, :h, :w] + 128.0
    if rgb.shape[0] == 3:
        rec[1:] -= 128.0
        rec = np.tensordot(_YCC_TO_RGB, rec, axes=1)
    out = np.clip(np.round(rec), 0.0, 255.0) / 255.0
    return (out[0] if gray else out).astype(arr.dtype)


# --------------------------------------------------------------------------
# bicubic resize
# --------------------------------------------------------------------------
def cubic_weight(t, a: float = -0.5):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int, factor: float) -> np.ndarray:
    """Row-stochastic (n_out x n_in) bicubic interpolation matrix with clamped taps."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / factor - 0.5
    base = np.floor(src).astype(np.int64)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for offset in (-1, 0, 1, 2):
        tap = base + offset
        wgt = cubic_weight(src - tap)
        np.add.at(m, (rows, np.clip(tap, 0, n_in - 1)), wgt)
    m.setflags(write=False)
    return m


def output_size(n: int, factor: float) -> int:
    return max(1, int(round(n * factor)))


def resize_bicubic(img, factor: float) -> np.ndarray:
    """Separable bicubic resize (Keys kernel, a = -0.5, half-pixel centers, clamped borders)."""
    if factor <= 0:
        raise DegradationError(f"resize factor must be positive, got {factor}")
    arr = _as_array(img)
    h, w = arr.shape[-2:]
    mh = resize_matrix(h, output_size(h, factor), float(factor))
    mw = resize_matrix(w, output_size(w, factor), float(factor))
    out = np.matmul(np.matmul(mh, arr.astype(np.float64)), mw.T)
    return out.astype(arr.dtype)


# --------------------------------------------------------------------------
# specs and the random pipeline
# --------------------------------------------------------------------------
def apply_spec(img, spec: DegradationSpec) -> np.ndarray:
    p = spec.params
    if spec.kind == "identity":
        return _as_array(img).copy()
    if spec.kind == "blur":
        return gaussian_blur(img, float(p["sigma"]))
    if spec.kind == "noise":
        return add_gaussian_noise(img, float(p["sigma"]), spec.seed)
    if spec.kind == "jpeg":
        return jpeg_like_compress(img, int(p["quality"]))
    if spec.kind == "resize":
        return np.clip(resize_bicubic(img, float(p["factor"])), 0.0, 1.0)
    out = _as_array(img)
    for stage in p["stages"]:
        out = apply_spec(out, stage)
    return out


def sample_pipeline(seed: int, scale: int = 4) -> DegradationSpec:
    """Draw blur sigma, noise sigma and JPEG quality uniformly from the declared ranges."""
    u = prng.uniform(prng.derive_seed(seed, "pipeline"), (3,))
    blur = BLUR_RANGE[0] + (BLUR_RANGE[1] - BLUR_RANGE[0]) * u[0]
    noise = NOISE_RANGE[0] + (NOISE_RANGE[1] - NOISE_RANGE[0]) * u[1]
    quality = JPEG_RANGE[0] + int(u[2] * (JPEG_RANGE[1] - JPEG_RANGE[0] + 1))
    stages = [
        DegradationSpec("blur", {"sigma": float(blur)}),
        DegradationSpec("noise", {"sigma": float(noise)}, seed=prng.derive_seed(seed, "noise")),
        DegradationSpec("jpeg", {"quality": int(quality)}),
        DegradationSpec("resize", {"factor": 1.0 / scale}),
    ]
    return DegradationSpec("pipeline", {"stages": stages}, seed=int(seed))


def random_pipeline(img, seed: int, scale: int = 4):
    """Blur -> noise -> JPEG -> downsample by ``scale``; returns (image, applied spec)."""
    spec = sample_pipeline(seed, scale)
    return apply_spec(img, spec), spec


def degrade_sequence(frames, seed: int, scale: int = 4, quality_jitter: int = 5):
    """Degrade a clip with one pipeline draw; per-frame noise fields and jittered JPEG quality.

    The jitter stands in for temporally varying video-codec quality.
    """
    clip_spec = sample_pipeline(seed, scale)
    blur, noise, jpeg, resize = clip_spec.params["stages"]
    out, specs = [], []
    for t, frame in enumerate(frames):
        u = prng.uniform(prng.derive_seed(seed, "jitter", t), (1,))[0]
        q = int(np.clip(jpeg.params["quality"] + round(quality_jitter * (2.0 * u - 1.0)), *JPEG_RANGE))
        stages = [blur,
                  DegradationSpec("noise", dict(noise.params), seed=prng.derive_seed(seed, "noise", t)),
                  DegradationSpec("jpeg", {"quality": q}),
                  resize]
        spec = DegradationSpec("pipeline", {"stages": stages}, seed=int(seed))
        out.append(apply_spec(frame, spec))
        specs.append(spec)
    return out, specs
