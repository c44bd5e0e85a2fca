"""Deterministic random substreams derived from a single master seed.

Every stochastic component (latent noise, prompt generation, benchmark
sampling) pulls from a named substream, so results are bit-reproducible
regardless of evaluation order or batching.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _component(value: int | str) -> int:
    """Map a path component to a non-negative 32-bit key."""
    if isinstance(value, str):
        digest = hashlib.blake2s(value.encode("utf-8"), digest_size=4).digest()
        return int.from_bytes(digest, "big")
    iv = int(value)
    if iv < 0:
        raise ValueError(f"stream path components must be non-negative, got {value}")
    return iv


def substream(master_seed: int, *path: int | str) -> np.random.Generator:
    """Return the generator for the substream named by ``path``.

    The same (master_seed, path) pair always yields an identical stream;
    distinct paths give statistically independent streams.
    """
    key = tuple(_component(p) for p in path)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def stable_digest(data: bytes, size: int = 8) -> int:
    """Stable integer digest (unlike ``hash()``, identical across runs)."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=size).digest(), "big")
