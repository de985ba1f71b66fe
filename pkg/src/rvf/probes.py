"""Probes: attention sensitivity to query degradation, and channel redundancy.

Sensitivity: embed frame t (query) and frame t-1 (key/value) with a fixed
random conv encoder, attend, and compare the output for a clean query with
the output for a degraded query by cosine similarity. Key and value are
always clean.

Untrained attention maps are close to uniform, and a uniform map ignores the
query entirely. Before measuring, each attention's query projection is
therefore rescaled so its map on a held-out clean pair reaches the same mean
normalized entropy (``TARGET_ENTROPY``). Channel attention here uses the raw
covariance ``Q K^T / alpha`` without L2 normalization of Q and K.

Covariance: mean absolute off-diagonal channel covariance of random feature
maps and of spatial/channel self-attention outputs computed from them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import entr

from . import ops, prng
from .attention import AttentionConfig, ChannelAttention, SpatialWindowAttention
from .degradation import DegradationSpec, apply_spec
from .diagnostics import ac_indicator, cosine_similarity
from .nn import Conv2d, Module, init_parameters
from .tensor import Tensor, no_grad

PROBE_KINDS = ("spatial", "channel")
TARGET_ENTROPY = 0.5
# the three query degradations of the sensitivity table
TABLE_SPECS = {
    "blur": DegradationSpec("blur", {"sigma": 2.0}),
    "noise": DegradationSpec("noise", {"sigma": 0.05}),
    "compression": DegradationSpec("jpeg", {"quality": 30}),
}


class ToyEncoder(Module):
    def __init__(self, dim: int = 16):
        self.conv1 = Conv2d(3, dim, 3)
        self.conv2 = Conv2d(dim, dim, 3)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(ops.gelu(self.conv1(x)))


@dataclass
class Probe:
    encoder: ToyEncoder
    spatial: SpatialWindowAttention
    channel: ChannelAttention
    query_scale: Dict[str, float] = field(default_factory=dict)

    def attention(self, kind: str):
        if kind not in PROBE_KINDS:
            raise ValueError(f"attention kind must be one of {PROBE_KINDS}, got {kind!r}")
        return getattr(self, kind)


def build_probe(seed: int = 0, dim: int = 16, window: int = 8, heads: int = 1) -> Probe:
    s_cfg = AttentionConfig(dim=dim, window=window, heads=heads)
    c_cfg = AttentionConfig(dim=dim, window=window, heads=heads, normalize_qk=False)
    return Probe(init_parameters(ToyEncoder(dim), prng.derive_seed(seed, "encoder")),
                 init_parameters(SpatialWindowAttention(s_cfg), prng.derive_seed(seed, "spatial")),
                 init_parameters(ChannelAttention(c_cfg), prng.derive_seed(seed, "channel")))


def map_entropy(amap) -> float:
    """Mean row entropy of an attention map, normalized by log(row length) to [0, 1]."""
    a = np.asarray(getattr(amap, "data", amap), dtype=np.float64)
    return float(np.mean(entr(a).sum(axis=-1)) / np.log(a.shape[-1]))


def _attend(probe: Probe, kind: str, query_frame, kv_frame):
    with no_grad():
        q = probe.encoder(Tensor(query_frame))
        kv = probe.encoder(Tensor(kv_frame))
        return probe.attention(kind)(q, kv)


def calibrate_probe(probe: Probe, prev, curr, target: float = TARGET_ENTROPY) -> Probe:
    """Rescale each query projection so the clean (curr, prev) map has mean normalized entropy ``target``."""
    if not 0.0 < target < 1.0:
        raise ValueError(f"target entropy must lie in (0, 1), got {target}")
    for kind in PROBE_KINDS:
        proj = probe.attention(kind).q.weight
        base = proj.data.astype(np.float64)

        def gap(log_scale):
            proj.data = (base * np.exp(log_scale)).astype(proj.dtype)
            return map_entropy(_attend(probe, kind, curr, prev).map) - target

        log_scale = brentq(gap, -8.0, 12.0, xtol=1e-6)
        proj.data = (base * np.exp(log_scale)).astype(proj.dtype)
        probe.query_scale[kind] = float(np.exp(log_scale))
    return probe


def attention_features(probe: Probe, kind: str, query_frame, kv_frame) -> np.ndarray:
    return _attend(probe, kind, query_frame, kv_frame).features.data


def sensitivity_experiment(probe: Probe, kind: str, prev, curr, spec: DegradationSpec) -> float:
    """Cosine similarity S between attention outputs for a clean and a degraded query."""
    clean = attention_features(probe, kind, curr, prev)
    degraded = attention_features(probe, kind, apply_spec(curr, spec), prev)
    return cosine_similarity(clean, degraded)


def calibrated_probe(seed: int = 0, target: float = TARGET_ENTROPY, size: int = 64, **probe_kw) -> Probe:
    """Probe with weights and calibration clip both derived from ``seed``."""
    from .corpus import synthetic_clip

    prev, curr = synthetic_clip(prng.derive_seed(seed, "calibration"), frames=2, height=size, width=size)
    return calibrate_probe(build_probe(seed, **probe_kw), prev, curr, target)


def sensitivity_table(clips: Sequence[Sequence], specs: Mapping[str, DegradationSpec] = None,
                      seed: int = 0, **probe_kw) -> Dict[str, Dict[str, float]]:
    """Mean S per (attention kind, degradation) over the first two frames of each clip.

    Stochastic specs get a per-clip seed derived from ``seed``.
    """
    specs = dict(TABLE_SPECS if specs is None else specs)
    size = np.shape(clips[0][0])[-1]
    probe = calibrated_probe(seed, size=size, **probe_kw)
    table = {kind: {} for kind in PROBE_KINDS}
    for name, spec in specs.items():
        scores = {kind: [] for kind in PROBE_KINDS}
        for i, clip in enumerate(clips):
            clip_spec = DegradationSpec(spec.kind, spec.params, prng.derive_seed(seed, "clip", i, name))
            for kind in PROBE_KINDS:
                scores[kind].append(sensitivity_experiment(probe, kind, clip[0], clip[1], clip_spec))
        for kind in PROBE_KINDS:
            table[kind][name] = float(np.mean(scores[kind]))
    return table


def random_features(seed: int, n: int, dim: int = 16, size: int = 32) -> list:
    return [prng.normal(prng.derive_seed(seed, "features", i), (dim, size, size)) for i in range(n)]


def covariance_probe(samples: int = 100, seed: int = 0, dim: int = 16, size: int = 32,
                     window: int = 8) -> Dict[str, float]:
    """ac of random inputs and of spatial/channel self-attention outputs.

    The attention modules are the block versions used in the model (channel
    attention with L2-normalized Q and K), at their seeded initialization.
    """
    cfg = AttentionConfig(dim=dim, window=window)
    spatial = init_parameters(SpatialWindowAttention(cfg, self_attention=True), prng.derive_seed(seed, "spatial"))
    channel = init_parameters(ChannelAttention(cfg, self_attention=True), prng.derive_seed(seed, "channel"))
    inputs = random_features(seed, samples, dim, size)
    with no_grad():
        outs_s = [spatial(Tensor(x)).features.data for x in inputs]
        outs_c = [channel(Tensor(x)).features.data for x in inputs]
    return {"input": ac_indicator(inputs), "spatial": ac_indicator(outs_s), "channel": ac_indicator(outs_c)}


def hidden_state_ac(hidden_states: Sequence) -> float:
    """ac over a batch of propagated hidden states."""
    return ac_indicator(hidden_states)
