"""Covariance-based attention: windowed spatial, channel, ICA, CAF, and GDFN.

All tensors are unbatched ``C x H x W``. Queries come from ``x`` and
keys/values from ``y``; passing ``y=None`` gives self-attention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import ops
from .nn import Conv2d, LayerNorm, Linear, Module, Scale
from .errors import ConfigError
from .tensor import Tensor


@dataclass
class AttentionConfig:
    dim: int                       # C, query channels
    key_dim: Optional[int] = None  # C-hat, key/value channels (defaults to C)
    proj_dim: Optional[int] = None  # D_s, spatial projection width (defaults to C)
    heads: int = 1
    window: int = 8
    squeeze_ratio: int = 4
    alpha: float = 1.0
    normalize_qk: bool = True      # L2-normalize channel-attention rows over HW

    def __post_init__(self):
        if self.key_dim is None:
            self.key_dim = self.dim
        if self.proj_dim is None:
            self.proj_dim = self.dim
        if self.window < 1 or self.heads < 1:
            raise ConfigError(f"window and heads must be positive: {self}")


class SpatialAttentionOut(NamedTuple):
    features: Tensor   # D_s x H x W
    map: Tensor        # n_windows x w^2 x w^2


class ChannelAttentionOut(NamedTuple):
    features: Tensor   # C x H x W
    map: Tensor        # heads x C/heads x C-hat/heads


# --------------------------------------------------------------------------
# functional cores
# --------------------------------------------------------------------------
def channel_attention_core(q: Tensor, k: Tensor, v: Tensor, alpha: Tensor, heads: int = 1,
                           normalize: bool = True) -> ChannelAttentionOut:
    """softmax(Q K^T / alpha) V over flattened spatial rows, split into heads."""
    c, h, w = q.shape
    ck = k.shape[0]
    if k.shape[1:] != (h, w) or v.shape != k.shape:
        raise ConfigError(f"query {q.shape}, key {k.shape}, value {v.shape} disagree")
    if c % heads or ck % heads:
        raise ConfigError(f"heads={heads} must divide query ({c}) and key ({ck}) channels")
    qm = ops.reshape(q, (heads, c // heads, h * w))
    km = ops.reshape(k, (heads, ck // heads, h * w))
    vm = ops.reshape(v, (heads, ck // heads, h * w))
    if normalize:
        qm = ops.l2_normalize(qm, axis=-1)
        km = ops.l2_normalize(km, axis=-1)
    logits = ops.matmul(qm, ops.transpose(km, (0, 2, 1)))
    logits = ops.div(logits, ops.reshape(alpha, (heads, 1, 1)))
    amap = ops.softmax(logits, axis=-1)
    out = ops.matmul(amap, vm)
    return ChannelAttentionOut(ops.reshape(out, (c, h, w)), amap)


def window_index(channels: int, h: int, w: int, window: int):
    """Flat-index maps between a C x H x W tensor and its reflect-padded windows.

    Returns ``(to_windows, from_windows)``: the first has shape
    (n_windows, window^2, C) and indexes the unpadded tensor; the second has
    shape (C, H, W) and indexes the flattened window tensor.
    """
    ph = (-h) % window
    pw = (-w) % window
    idx = np.arange(channels * h * w).reshape(channels, h, w)
    if ph or pw:
        idx = np.pad(idx, ((0, 0), (0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")
    hp, wp = h + ph, w + pw
    nh, nw = hp // window, wp // window
    # (C, nh, w, nw, w) -> (nh, nw, w, w, C)
    win = idx.reshape(channels, nh, window, nw, window).transpose(1, 3, 2, 4, 0)
    to_windows = win.reshape(nh * nw, window * window, channels)
    pos = np.arange(nh * nw * window * window * channels).reshape(nh, nw, window, window, channels)
    back = pos.transpose(4, 0, 2, 1, 3).reshape(channels, hp, wp)[:, :h, :w]
    return to_windows, back


def window_attention_core(q: Tensor, k: Tensor, v: Tensor, window: int) -> SpatialAttentionOut:
    """softmax(Q^T K / sqrt(D)) V^T inside non-overlapping window x window tiles."""
    d, h, w = q.shape
    to_win, back = window_index(d, h, w, window)
    qw = ops.gather(q, to_win)
    kw = ops.gather(k, to_win)
    vw = ops.gather(v, to_win)
    logits = ops.mul(ops.matmul(qw, ops.transpose(kw, (0, 2, 1))), 1.0 / math.sqrt(d))
    amap = ops.softmax(logits, axis=-1)
    out = ops.matmul(amap, vw)
    return SpatialAttentionOut(ops.gather(out, back), amap)


# --------------------------------------------------------------------------
# modules
# --------------------------------------------------------------------------
class SpatialWindowAttention(Module):
    def __init__(self, cfg: AttentionConfig, self_attention: bool = False):
        self.cfg = cfg
        self.self_attention = self_attention
        self.norm_x = LayerNorm(cfg.dim)
        self.norm_y = None if self_attention else LayerNorm(cfg.key_dim)
        self.q = Conv2d(cfg.dim, cfg.proj_dim, 1, bias=False)
        self.k = Conv2d(cfg.key_dim, cfg.proj_dim, 1, bias=False)
        self.v = Conv2d(cfg.key_dim, cfg.proj_dim, 1, bias=False)

    def forward(self, x: Tensor, y: Optional[Tensor] = None) -> SpatialAttentionOut:
        xn = self.norm_x(x)
        yn = xn if self.self_attention else self.norm_y(y)
        return window_attention_core(self.q(xn), self.k(yn), self.v(yn), self.cfg.window)


class ChannelAttention(Module):
    def __init__(self, cfg: AttentionConfig, self_attention: bool = False):
        self.cfg = cfg
        self.self_attention = self_attention
        self.norm_x = LayerNorm(cfg.dim)
        self.norm_y = None if self_attention else LayerNorm(cfg.key_dim)
        self.q = Conv2d(cfg.dim, cfg.dim, 1, bias=False)
        self.k = Conv2d(cfg.key_dim, cfg.key_dim, 1, bias=False)
        self.v = Conv2d(cfg.key_dim, cfg.key_dim, 1, bias=False)
        self.temperature = Scale(cfg.heads, cfg.alpha)

    def forward(self, x: Tensor, y: Optional[Tensor] = None) -> ChannelAttentionOut:
        xn = self.norm_x(x)
        yn = xn if self.self_attention else self.norm_y(y)
        return channel_attention_core(self.q(xn), self.k(yn), self.v(yn), self.temperature.value,
                                      self.cfg.heads, self.cfg.normalize_qk)


# sigmoid saturates to exactly 1.0 in floating point beyond |z| ~ 37; squeezing
# its range by WEIGHT_EPS keeps the weights strictly inside (0, 1)
WEIGHT_EPS = 1e-6


class RescaleWeights(Module):
    """Per-channel weights in (0, 1) from row statistics (mean, max) of an attention map."""

    def __init__(self, hidden: int = 8):
        self.fc1 = Linear(2, hidden)
        self.fc2 = Linear(hidden, 1, zero_init=True)

    def forward(self, amap: Tensor) -> Tensor:
        stats = ops.concat([ops.mean(amap, axis=-1, keepdims=True),
                            ops.amax(amap, axis=-1, keepdims=True)], axis=-1)
        hidden = ops.gelu(self.fc1(stats))
        weights = ops.add(ops.mul(ops.sigmoid(self.fc2(hidden)), 1.0 - 2.0 * WEIGHT_EPS), WEIGHT_EPS)
        # heads x n x 1 collapses to (heads * n) x 1, matching the channel order
        return ops.reshape(weights, (int(np.prod(amap.shape[:-1])), 1))


class ICA(Module):
    """Squeeze -> channel self-attention -> map-driven rescale -> excite, plus residual."""

    def __init__(self, dim: int, heads: int = 1, squeeze_ratio: int = 4, alpha: float = 1.0,
                 normalize_qk: bool = True):
        if squeeze_ratio < 1 or dim % squeeze_ratio:
            raise ConfigError(f"squeeze ratio {squeeze_ratio} must divide channel count {dim}")
        inner = dim // squeeze_ratio
        if inner % heads:
            raise ConfigError(f"heads={heads} must divide squeezed channel count {inner}")
        self.squeeze = Conv2d(dim, inner, 1)
        self.attn = ChannelAttention(AttentionConfig(dim=inner, heads=heads, alpha=alpha,
                                                     normalize_qk=normalize_qk), self_attention=True)
        self.rescale = RescaleWeights()
        self.excite = Conv2d(inner, dim, 1)

    def forward(self, x: Tensor, return_map: bool = False):
        squeezed = self.squeeze(x)
        att = self.attn(squeezed)
        weights = self.rescale(att.map)
        feats = ops.mul(att.features, ops.reshape(weights, (weights.shape[0], 1, 1)))
        out = ops.add(x, self.excite(feats))
        return (out, att.map) if return_map else out


class CAF(Module):
    """Channel Attention Fusion: query from the current feature, key/value from the hidden state."""

    def __init__(self, dim: int, heads: int = 1, alpha: float = 1.0, normalize_qk: bool = True):
        if dim % heads:
            raise ConfigError(f"heads={heads} must divide CAF channels {dim}")
        self.heads = heads
        self.normalize_qk = normalize_qk
        self.norm_f = LayerNorm(dim)
        self.q_conv = Conv2d(dim, dim, 3, bias=False)
        self.norm_h = LayerNorm(dim)
        self.kv_conv = Conv2d(dim, dim, 1, bias=False)
        self.kv_dwconv = Conv2d(dim, 2 * dim, 3, groups=dim, bias=False)
        self.temperature = Scale(heads, alpha)
        self.fuse_in = Conv2d(2 * dim, dim, 1)
        self.fuse_dwconv = Conv2d(dim, dim, 3, groups=dim)
        self.fuse_out = Conv2d(dim, dim, 1)

    def forward(self, f: Tensor, h: Tensor, return_map: bool = False):
        if f.shape != h.shape:
            raise ConfigError(f"CAF inputs disagree: {f.shape} vs {h.shape}")
        q = self.q_conv(self.norm_f(f))
        k, v = ops.chunk(self.kv_dwconv(self.kv_conv(self.norm_h(h))), 2, axis=0)
        att = channel_attention_core(q, k, v, self.temperature.value, self.heads, self.normalize_qk)
        out = self.fuse_out(self.fuse_dwconv(self.fuse_in(ops.concat([att.features, f], axis=0))))
        return (out, att.map) if return_map else out


class GDFN(Module):
    """Gated depth-wise feed-forward network with residual."""

    def __init__(self, dim: int, expansion: float = 2.0):
        hidden = int(dim * expansion)
        self.norm = LayerNorm(dim)
        self.project_in = Conv2d(dim, 2 * hidden, 1, bias=False)
        self.dwconv = Conv2d(2 * hidden, 2 * hidden, 3, groups=2 * hidden, bias=False)
        self.project_out = Conv2d(hidden, dim, 1, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        gate, value = ops.chunk(self.dwconv(self.project_in(self.norm(x))), 2, axis=0)
        return ops.add(x, self.project_out(ops.mul(ops.gelu(gate), value)))


# --------------------------------------------------------------------------
# block kinds and fusion kinds used by the reconstruction network
# --------------------------------------------------------------------------
class ResidualBlock(Module):
    def __init__(self, dim: int):
        self.conv1 = Conv2d(dim, dim, 3)
        self.conv2 = Conv2d(dim, dim, 3)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(x, self.conv2(ops.gelu(self.conv1(x))))


class ChannelAttentionMixer(Module):
    """Vanilla (Restormer-style) channel self-attention with output projection."""

    def __init__(self, dim: int, heads: int = 1, normalize_qk: bool = True):
        self.attn = ChannelAttention(AttentionConfig(dim=dim, heads=heads, normalize_qk=normalize_qk),
                                     self_attention=True)
        self.project = Conv2d(dim, dim, 1, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(x, self.project(self.attn(x).features))


class SpatialAttentionMixer(Module):
    def __init__(self, dim: int, window: int = 8):
        self.attn = SpatialWindowAttention(AttentionConfig(dim=dim, window=window), self_attention=True)
        self.project = Conv2d(dim, dim, 1, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(x, self.project(self.attn(x).features))


BLOCK_KINDS = ("conv", "spatial-attn", "channel-attn", "ICA")
FUSION_KINDS = ("concat", "spatial", "channel", "caf")


class TransformerBlock(Module):
    """Token mixer (attention or ICA) followed by GDFN."""

    def __init__(self, dim: int, kind: str, heads: int = 1, squeeze_ratio: int = 4, window: int = 8):
        if kind == "ICA":
            self.mixer = ICA(dim, heads=heads, squeeze_ratio=squeeze_ratio)
        elif kind == "channel-attn":
            self.mixer = ChannelAttentionMixer(dim, heads=heads)
        elif kind == "spatial-attn":
            self.mixer = SpatialAttentionMixer(dim, window=window)
        else:
            raise ConfigError(f"unknown transformer block kind {kind!r}")
        self.ffn = GDFN(dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.mixer(x))


def make_block(kind: str, dim: int, heads: int = 1, squeeze_ratio: int = 4, window: int = 8) -> Module:
    if kind == "conv":
        return ResidualBlock(dim)
    if kind not in BLOCK_KINDS:
        raise ConfigError(f"block_kind must be one of {BLOCK_KINDS}, got {kind!r}")
    return TransformerBlock(dim, kind, heads=heads, squeeze_ratio=squeeze_ratio, window=window)


class ConcatFusion(Module):
    def __init__(self, dim: int):
        self.merge = Conv2d(2 * dim, dim, 1)

    def forward(self, f: Tensor, h: Tensor) -> Tensor:
        return self.merge(ops.concat([f, h], axis=0))


class AttentionFusion(Module):
    """Query from f, key/value from h; output concatenated with f then merged by 1x1 conv."""

    def __init__(self, dim: int, kind: str, heads: int = 1, window: int = 8):
        cfg = AttentionConfig(dim=dim, heads=heads, window=window)
        self.attn = ChannelAttention(cfg) if kind == "channel" else SpatialWindowAttention(cfg)
        self.merge = Conv2d(2 * dim, dim, 1)

    def forward(self, f: Tensor, h: Tensor) -> Tensor:
        return self.merge(ops.concat([self.attn(f, h).features, f], axis=0))


def make_fusion(kind: str, dim: int, heads: int = 1, window: int = 8) -> Module:
    if kind == "concat":
        return ConcatFusion(dim)
    if kind == "caf":
        return CAF(dim, heads=heads)
    if kind in ("spatial", "channel"):
        return AttentionFusion(dim, kind, heads=heads, window=window)
    raise ConfigError(f"fusion must be one of {FUSION_KINDS}, got {kind!r}")
