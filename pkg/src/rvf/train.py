"""Stage-1 training: Charbonnier + weighted (1 - SSIM), first-order optimizers."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import ops
from .errors import ConfigError
from .checkpoint import Checkpoint
from .losses import stage1_loss
from .model import ModelConfig, VSRModel, build_model
from .prng import derive_seed
from .tensor import Tensor

OPTIMIZERS = ("sgd", "adam")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 2e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ssim_weight: float = 1e-3
    charbonnier_eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.steps < 0 or self.lr <= 0:
            raise ConfigError(f"steps must be >= 0 and lr > 0, got steps={self.steps}, lr={self.lr}")

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    """Gradient descent with heavy-ball momentum: v <- m v + g; p <- p - lr v."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0):
        self.params, self.lr, self.momentum = list(params), lr, momentum
        self.velocity = [np.zeros(p.shape) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = (p.data - self.lr * v).astype(p.dtype)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params, self.lr = list(params), lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(params, cfg.lr, cfg.momentum)
    return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def sequence_loss(model: VSRModel, lr_frames, hr_frames, cfg: TrainConfig) -> Tensor:
    outs = model(lr_frames)
    terms = [stage1_loss(hr, out, cfg.ssim_weight, cfg.charbonnier_eps) for hr, out in zip(hr_frames, outs)]
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.mul(total, 1.0 / len(terms))


def train_stage1(dataset: Sequence[Tuple[list, list]], model_cfg: ModelConfig, cfg: TrainConfig,
                 model: Optional[VSRModel] = None,
                 callback: Optional[Callable[[int, float], None]] = None) -> Checkpoint:
    """Train on (LR clip, HR clip) pairs, cycling through the dataset in order.

    Raises :class:`TrainingError` naming the step if the loss is not finite.
    """
    if not dataset:
        raise ConfigError("training dataset is empty")
    if model is None:
        model = build_model(model_cfg, derive_seed(cfg.seed, "init"))
    opt = make_optimizer(model.parameters(), cfg)
    trace: List[float] = []
    for step in range(cfg.steps):
        lr_frames, hr_frames = dataset[step % len(dataset)]
        model.zero_grad()
        loss = sequence_loss(model, lr_frames, hr_frames, cfg)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at step {step}")
        loss.backward()
        opt.step()
        trace.append(value)
        if callback is not None:
            callback(step, value)
    return Checkpoint(model.state_dict(), cfg.steps,
                      {"model": model_cfg.to_dict(), "train": cfg.to_dict()}, trace)


def model_from_checkpoint(ckpt: Checkpoint) -> VSRModel:
    cfg = ModelConfig.from_dict(ckpt.config["model"])
    model = VSRModel(cfg)
    model.load_state_dict(ckpt.params)
    return model
