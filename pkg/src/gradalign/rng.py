"""Deterministic, splittable random streams.

Every stochastic site asks for a stream keyed by ``(run seed, purpose, *indices)``.
Streams are Philox generators seeded through :class:`numpy.random.SeedSequence`,
so a stream depends only on its key and never on the order in which other
streams were drawn. This is what makes results independent of parallelism.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["Streams", "stream"]

_MASK64 = (1 << 64) - 1


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return the generator for one ``(seed, purpose, indices)`` key."""
    for i in indices:
        if int(i) < 0:
            raise ValueError(f"stream indices must be non-negative, got {indices}")
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=(_purpose_key(purpose), *(int(i) for i in indices)),
    )
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Stream factory bound to a run seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def get(self, purpose: str, *indices: int) -> np.random.Generator:
        return stream(self.seed, purpose, *indices)

    def __repr__(self):
        return f"Streams(seed={self.seed})"
