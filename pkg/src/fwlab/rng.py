"""Counter-based random streams.

Every Monte Carlo run draws from a :class:`RngStream`, a Philox generator
keyed by a 64-bit root seed and a 64-bit stream id. Named sub-streams
(``"module:purpose:index"``) hash to stream ids so that ensemble chunks can be
generated independently and in any order.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def stream_id(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & _MASK
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Deterministic normal-increment source.

    Parameters
    ----------
    seed : int
        Root seed (reduced modulo 2**64).
    stream : int or str
        Stream id, or a name hashed to one.
    """

    def __init__(self, seed: int, stream=0):
        self.seed = int(seed) & _MASK
        self.stream = stream_id(stream)
        bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self.generator = np.random.Generator(bitgen)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def substream(self, name) -> "RngStream":
        """Independent stream derived from this one and a name."""
        return RngStream(self.seed, stream_id(f"{self.stream}/{name}"))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"
