"""Synthetic moving-texture clips and PNG frame directories."""
from __future__ import annotations

import os
from pathlib import Path
from typing import List, Sequence

import numpy as np
from PIL import Image

from . import prng

_COLOR_MIX = np.array([[1.0, 0.6, 0.6], [0.6, 1.0, 0.6], [0.6, 0.6, 1.0]])
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


class CorpusError(OSError):
    """Unreadable or empty frame directory."""


def synthetic_clip(seed: int, frames: int = 5, height: int = 64, width: int = 64,
                   max_speed: int = 2, beta: float = 1.0) -> List[np.ndarray]:
    """A colored 1/f^beta texture panned at a constant integer velocity.

    Amplitude falling as 1/f mirrors the spectrum of natural images. The
    three color channels share most of their structure.
    """
    vel = prng.uniform(prng.derive_seed(seed, "velocity"), (2,))
    vx, vy = (np.floor(vel * (2 * max_speed + 1)) - max_speed).astype(int)
    margin = max_speed * frames
    ch, cw = height + 2 * margin, width + 2 * margin
    noise = prng.normal(prng.derive_seed(seed, "texture"), (3, ch, cw))
    fy = np.fft.fftfreq(ch)[:, None]
    fx = np.fft.fftfreq(cw)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = 1.0
    canvas = np.real(np.fft.ifft2(np.fft.fft2(noise) / f ** beta))
    canvas = np.tensordot(_COLOR_MIX, canvas, axes=1)
    lo, hi = np.percentile(canvas, [1, 99])
    canvas = np.clip((canvas - lo) / (hi - lo), 0.0, 1.0)
    out = []
    for t in range(frames):
        y0, x0 = margin + vy * t, margin + vx * t
        out.append(np.ascontiguousarray(canvas[:, y0:y0 + height, x0:x0 + width], dtype=np.float32))
    return out


def quantize(frame) -> np.ndarray:
    return np.round(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def list_frames(directory) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CorpusError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise CorpusError(f"empty corpus: no image files in {d}")
    return files


def load_frames(directory) -> List[np.ndarray]:
    """Decode lexicographically ordered images as 3 x H x W float32 in [0, 1]."""
    frames = []
    for path in list_frames(directory):
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"))
        except (OSError, ValueError) as exc:
            raise CorpusError(f"cannot read frame {path}: {exc}") from exc
        frames.append((arr.transpose(2, 0, 1).astype(np.float32) / 255.0))
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise CorpusError(f"frames in {directory} differ in size: {sorted(shapes)}")
    return frames


def save_frames(frames: Sequence, directory, prefix: str = "frame") -> List[Path]:
    """Write 8-bit RGB PNGs named ``{prefix}_{t:05d}.png``."""
    d = Path(directory)
    os.makedirs(d, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        arr = quantize(frame)
        if arr.ndim == 2:
            arr = np.repeat(arr[None], 3, axis=0)
        path = d / f"{prefix}_{t:05d}.png"
        Image.fromarray(arr.transpose(1, 2, 0)).save(path)
        paths.append(path)
    return paths
