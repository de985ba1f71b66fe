"""Recurrent video super-resolution model.

Per time step: estimate flow between consecutive LR frames, warp the previous
hidden state, fuse it with a shallow embedding of the current frame, refine
with a U-shaped block stack (the result is the new hidden state), then
upsample with pixel shuffle on top of a bicubic residual.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import ops
from .attention import (BLOCK_KINDS, FUSION_KINDS, ConcatFusion, ResidualBlock, make_block,
                        make_fusion)
from .errors import ConfigError
from .degradation import resize_bicubic
from .flow import estimate_flow
from .nn import Conv2d, Module, init_parameters
from .tensor import Tensor, no_grad

SCALES = (2, 4)


@dataclass
class ModelConfig:
    channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    blocks: List[int] = field(default_factory=lambda: [2, 2, 2])
    heads: List[int] = field(default_factory=lambda: [1, 2, 4])
    squeeze_ratio: int = 4
    fusion: str = "caf"
    block_kind: str = "ICA"
    scale: int = 4
    window: int = 4
    fusion_heads: int = 1

    def __post_init__(self):
        self.channels, self.blocks, self.heads = list(self.channels), list(self.blocks), list(self.heads)
        if not (len(self.channels) == len(self.blocks) == len(self.heads)) or not self.channels:
            raise ConfigError(f"channels/blocks/heads must have equal non-zero length, got "
                              f"{self.channels}, {self.blocks}, {self.heads}")
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"fusion must be one of {FUSION_KINDS}, got {self.fusion!r}")
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"block_kind must be one of {BLOCK_KINDS}, got {self.block_kind!r}")
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale}")
        if min(self.channels) < 1 or min(self.blocks) < 0 or min(self.heads) < 1:
            raise ConfigError("channels and heads must be positive, blocks non-negative")

    @property
    def levels(self) -> int:
        return len(self.channels)

    @property
    def hidden_channels(self) -> int:
        return self.channels[0]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _run(blocks: Sequence[Module], x: Tensor) -> Tensor:
    for b in blocks:
        x = b(x)
    return x


class Reconstruction(Module):
    """Shallow 3x3 embed -> fusion with the warped hidden state -> U-net; returns the new hidden state."""

    def __init__(self, cfg: ModelConfig):
        ch = cfg.channels
        self.embed = Conv2d(3, ch[0], 3)
        self.fusion = make_fusion(cfg.fusion, ch[0], heads=cfg.fusion_heads, window=cfg.window)

        def stage(i):
            return [make_block(cfg.block_kind, ch[i], heads=cfg.heads[i],
                               squeeze_ratio=cfg.squeeze_ratio, window=cfg.window)
                    for _ in range(cfg.blocks[i])]

        self._build_unet(ch, stage)

    def _build_unet(self, ch, stage):
        last = len(ch) - 1
        self.encoders = [stage(i) for i in range(last)]
        self.downs = [Conv2d(ch[i], ch[i + 1], 3, stride=2) for i in range(last)]
        self.latent = stage(last)
        self.ups = [Conv2d(ch[i + 1], 4 * ch[i], 3) for i in range(last)]
        self.reduces = [Conv2d(2 * ch[i], ch[i], 1) for i in range(last)]
        self.decoders = [stage(i) for i in range(last)]

    def forward(self, frame: Tensor, h_warped: Tensor) -> Tensor:
        f = self.embed(frame)
        fused = self.fusion(f, h_warped)
        # the U-net halves resolution len(downs) times: edge-pad to a multiple, crop after
        mult = 2 ** len(self.downs)
        h, w = fused.shape[1:]
        ph, pw = -h % mult, -w % mult
        x = ops.pad2d(fused, (0, ph, 0, pw)) if ph or pw else fused
        skips = []
        for enc, down in zip(self.encoders, self.downs):
            x = _run(enc, x)
            skips.append(x)
            x = down(x)
        x = _run(self.latent, x)
        for i in reversed(range(len(self.downs))):
            x = ops.pixel_shuffle(self.ups[i](x), 2)
            x = self.reduces[i](ops.concat([x, skips[i]], axis=0))
            x = _run(self.decoders[i], x)
        if ph or pw:
            x = ops.getitem(x, (slice(None), slice(0, h), slice(0, w)))
        return ops.add(x, fused)


class Upsampler(Module):
    """conv -> pixel_shuffle(2) -> GELU per factor of 2, then a zero-initialized 3-channel conv.

    The bicubic-upsampled LR frame is added as a global residual.
    """

    def __init__(self, channels: int, scale: int = 4):
        if scale not in SCALES:
            raise ConfigError(f"upsampling scale must be one of {SCALES}, got {scale}")
        self.scale = scale
        self.stages = [Conv2d(channels, 4 * channels, 3) for _ in range(scale.bit_length() - 1)]
        self.out = Conv2d(channels, 3, 3, zero_init=True)

    def forward(self, h: Tensor, frame, clip: bool = False) -> Tensor:
        x = h
        for conv in self.stages:
            x = ops.gelu(ops.pixel_shuffle(conv(x), 2))
        base = resize_bicubic(np.asarray(getattr(frame, "data", frame), dtype=np.float64), self.scale)
        out = ops.add(self.out(x), Tensor(base, dtype=h.dtype))
        if clip:
            out = Tensor(np.clip(out.data, 0.0, 1.0))
        return out


class VSRModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        self.reconstruct = Reconstruction(cfg)
        self.upsample = Upsampler(cfg.hidden_channels, cfg.scale)

    def initial_state(self, frame) -> Tensor:
        h, w = np.shape(getattr(frame, "data", frame))[1:]
        return Tensor(np.zeros((self.config.hidden_channels, h, w)), dtype=self.parameters()[0].dtype)

    def step(self, frame, prev_frame, h_prev: Tensor, clip: bool = False):
        """One recurrence step; returns (new hidden state, HR output)."""
        frame_t = frame if isinstance(frame, Tensor) else Tensor(frame, dtype=h_prev.dtype)
        if prev_frame is not None:
            h_prev = ops.bilinear_warp(h_prev, estimate_flow(prev_frame, frame_t))
        h = self.reconstruct(frame_t, h_prev)
        return h, self.upsample(h, frame_t, clip=clip)

    def forward(self, frames: Sequence, clip: bool = False, return_hidden: bool = False):
        """Unidirectional pass with h_0 = 0; returns T HR frames (and hidden states)."""
        if len(frames) == 0:
            raise ValueError("empty sequence")
        h = self.initial_state(frames[0])
        outs, hidden, prev = [], [], None
        for frame in frames:
            h, out = self.step(frame, prev, h, clip=clip)
            outs.append(out)
            hidden.append(h)
            prev = frame
        return (outs, hidden) if return_hidden else outs


def build_model(cfg: ModelConfig, seed: int = 0) -> VSRModel:
    return init_parameters(VSRModel(cfg), seed)


def run_sequence(model: VSRModel, frames: Sequence, return_hidden: bool = False):
    """Inference: no graph recording, outputs clipped to [0, 1], returned as numpy arrays."""
    with no_grad():
        outs, hidden = model(frames, clip=True, return_hidden=True)
    outs = [o.data for o in outs]
    return (outs, [h.data for h in hidden]) if return_hidden else outs


def build_baseline(channels: Sequence[int] = (16, 32, 64), blocks: Sequence[int] = (2, 2, 2),
                   scale: int = 4, seed: int = 0) -> VSRModel:
    """Plain recurrent baseline assembled directly: concatenation fusion and residual conv blocks."""
    ch = list(channels)
    recon = Reconstruction.__new__(Reconstruction)
    recon.embed = Conv2d(3, ch[0], 3)
    recon.fusion = ConcatFusion(ch[0])
    last = len(ch) - 1
    recon.encoders = [[ResidualBlock(ch[i]) for _ in range(blocks[i])] for i in range(last)]
    recon.downs = [Conv2d(ch[i], ch[i + 1], 3, stride=2) for i in range(last)]
    recon.latent = [ResidualBlock(ch[last]) for _ in range(blocks[last])]
    recon.ups = [Conv2d(ch[i + 1], 4 * ch[i], 3) for i in range(last)]
    recon.reduces = [Conv2d(2 * ch[i], ch[i], 1) for i in range(last)]
    recon.decoders = [[ResidualBlock(ch[i]) for _ in range(blocks[i])] for i in range(last)]
    model = VSRModel.__new__(VSRModel)
    model.config = ModelConfig(ch, list(blocks), [1] * len(ch), fusion="concat",
                               block_kind="conv", scale=scale)
    model.reconstruct = recon
    model.upsample = Upsampler(ch[0], scale)
    return init_parameters(model, seed)
