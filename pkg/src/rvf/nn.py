"""Parameter containers and the small set of layers the models are built from."""
from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import ops
from .prng import derive_seed, generator
from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=DEFAULT_DTYPE):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)


class Module:
    """Base class: parameters and submodules are discovered from attributes.

    Lists of modules are traversed too. Parameter names are dotted attribute
    paths, in attribute insertion order.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            yield from _named(value, f"{prefix}{name}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _named(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _named(item, f"{name}.{i}")


def init_parameters(module: Module, seed: int) -> Module:
    """Re-initialize every parameter from a seed derived from its dotted name.

    Each layer answers ``init_spec(leaf)`` with ``("const", value)`` or
    ``("uniform", fan_in)``; per-name seeds make the result independent of
    construction order.
    """
    for name, p in module.named_parameters():
        owner, leaf = _owner(module, name)
        kind, arg = owner.init_spec(leaf)
        if kind == "const":
            value = np.full(p.shape, float(arg))
        else:  # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)): Kaiming-uniform with a = sqrt(5)
            bound = 1.0 / math.sqrt(arg)
            value = generator(derive_seed(seed, name)).uniform(-bound, bound, size=p.shape)
        p.data = value.astype(p.dtype)
    return module


def _owner(module: Module, dotted: str):
    parts = dotted.split(".")
    obj = module
    for part in parts[:-1]:
        obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
    return obj, parts[-1]


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int = 1, stride: int = 1, groups: int = 1,
                 bias: bool = True, zero_init: bool = False):
        if cin % groups or cout % groups:
            raise ValueError(f"groups={groups} must divide cin={cin} and cout={cout}")
        self.weight = Parameter(np.zeros((cout, cin // groups, kernel, kernel)))
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.groups = groups
        self.pad = kernel // 2
        self.zero_init = zero_init

    def init_spec(self, leaf):
        if self.zero_init:
            return "const", 0.0
        fan_in = self.weight.shape[1] * self.weight.shape[2] * self.weight.shape[3]
        return "uniform", fan_in

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad,
                          groups=self.groups)


class LayerNorm(Module):
    """Channel-wise layer norm with affine weight and bias."""

    def __init__(self, channels: int, eps: float = 1e-6):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.eps = eps

    def init_spec(self, leaf):
        return "const", 1.0 if leaf == "weight" else 0.0

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, eps=self.eps)


class Linear(Module):
    """y = x @ W^T + b acting on the last axis."""

    def __init__(self, fin: int, fout: int, zero_init: bool = False):
        self.weight = Parameter(np.zeros((fout, fin)))
        self.bias = Parameter(np.zeros(fout))
        self.zero_init = zero_init

    def init_spec(self, leaf):
        if self.zero_init:
            return "const", 0.0
        return "uniform", self.weight.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        return ops.add(ops.matmul(x, ops.transpose(self.weight, (1, 0))), self.bias)


class Scale(Module):
    """A learnable vector initialised to a constant (attention temperature)."""

    def __init__(self, n: int, value: float = 1.0):
        self.value = Parameter(np.full(n, value))
        self.init_value = value

    def init_spec(self, leaf):
        return "const", self.init_value
