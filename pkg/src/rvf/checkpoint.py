"""Checkpoint container: JSON header followed by named RVFT tensors.

Layout: magic ``b"RVFC"``, version byte (1), uint32 little-endian header
length, UTF-8 JSON header, then one RVFT blob per entry of
``header["tensors"]`` in that order. The header also carries ``step``,
``config`` and ``loss_trace``.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import tensor_io

MAGIC = b"RVFC"
VERSION = 1


@dataclass
class Checkpoint:
    params: "OrderedDict[str, np.ndarray]"
    step: int = 0
    config: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "tensors": list(ckpt.params),
        "step": int(ckpt.step),
        "config": ckpt.config,
        "loss_trace": [float(v) for v in ckpt.loss_trace],
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]) + struct.pack("<I", len(head)) + head)
        for name in ckpt.params:
            fh.write(tensor_io.encode(ckpt.params[name]))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise tensor_io.TensorFormatError(f"{path}: not a checkpoint (magic {buf[:4]!r})")
    if buf[4] != VERSION:
        raise tensor_io.TensorFormatError(f"{path}: unsupported checkpoint version {buf[4]}")
    (hlen,) = struct.unpack_from("<I", buf, 5)
    header = json.loads(buf[9:9 + hlen].decode())
    pos = 9 + hlen
    params = OrderedDict()
    for name in header["tensors"]:
        params[name], pos = tensor_io.decode(buf, pos)
    return Checkpoint(params, header["step"], header["config"], header["loss_trace"])
