"""Counter-based random numbers and seed derivation.

Streams come from Philox4x64-10 (Salmon et al., Random123) keyed by a 64-bit
seed. Block ``i`` of a stream is the Philox output for the 256-bit counter
``i`` (little-endian 64-bit words) and key ``(seed, 0)``; each block yields
four 64-bit words, consumed in order. Known-answer vector: key 0, counter 0
gives ``16554d9eca36314c db20fe9d672d0fdc d7e772cee186176b 7e68b68aec7ba23b``.

Uniforms take the top 53 bits: ``u = (word >> 11) * 2**-53`` in [0, 1).
Normals use Box-Muller on consecutive uniform pairs ``(u1, u2)``:
``z0 = sqrt(-2 ln(1 - u1)) cos(2 pi u2)``, ``z1 = ... sin(2 pi u2)``.

Child seeds are the first 8 bytes (little-endian) of
``sha256(f"{seed}/{label}")``, so every stage of an experiment can be
re-run in isolation from the top-level seed.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *labels) -> int:
    """Deterministic child seed for ``labels`` under ``seed``."""
    value = int(seed) & _MASK64
    for label in labels:
        digest = hashlib.sha256(f"{value}/{label}".encode()).digest()
        value = int.from_bytes(digest[:8], "little")
    return value


def raw_words(seed: int, count: int) -> np.ndarray:
    """First ``count`` 64-bit words of the stream for ``seed``."""
    # numpy's Philox increments its counter before producing a block,
    # so start one below zero to emit block 0 first.
    gen = np.random.Philox(key=int(seed) & _MASK64, counter=(1 << 256) - 1)
    return gen.random_raw(count).astype(np.uint64)


def uniform(seed: int, shape) -> np.ndarray:
    n = int(np.prod(shape))
    words = raw_words(seed, n)
    return ((words >> np.uint64(11)).astype(np.float64) * 2.0 ** -53).reshape(shape)


def normal(seed: int, shape) -> np.ndarray:
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = uniform(seed, (pairs, 2))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)
    return z[:n].reshape(shape)


def generator(seed: int) -> np.random.Generator:
    """numpy Generator on the same Philox stream, for non-portable uses (init, sampling)."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))
