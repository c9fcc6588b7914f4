"""Deterministic random-stream derivation: one run seed fans out into
independent, label-keyed generators so every consumer is reproducible."""

from __future__ import annotations

import zlib

import numpy as np


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """A generator keyed by (seed, label); stable across runs and platforms."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def truncated_normal(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    std: float = 0.02,
    bound: float = 0.02,
    dtype=np.float32,
) -> np.ndarray:
    """Normal(0, std) samples redrawn until all fall inside [-bound, bound]."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out.astype(dtype)
