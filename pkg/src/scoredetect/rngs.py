"""Deterministic random-number streams.

Every stochastic routine in this package takes an explicit stream (or a
``numpy`` generator derived from one).  A fixed ``(master_seed, stream_id)``
pair reproduces the same draws on every run, every platform, and every
worker count; there are no entropy-based defaults anywhere.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "as_generator"]


@dataclass(frozen=True)
class RngStream:
    """Named substream of a master seed.

    ``stream_id`` may be a single integer or a tuple of integers; tuples
    arise from :meth:`substream`, which derives a child stream that never
    collides with its siblings.
    """

    master_seed: int
    stream_id: int | tuple[int, ...] = 0

    def __post_init__(self):
        if not isinstance(self.master_seed, (int, np.integer)):
            raise TypeError("master_seed must be an integer")
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        if not all(isinstance(k, (int, np.integer)) and k >= 0 for k in key):
            raise ValueError("stream ids must be non-negative integers")

    def _key(self) -> tuple[int, ...]:
        sid = self.stream_id
        return tuple(int(k) for k in sid) if isinstance(sid, tuple) else (int(sid),)

    def substream(self, *ids: int) -> "RngStream":
        """Child stream addressed by appending ``ids`` to this stream's key."""
        return RngStream(self.master_seed, self._key() + tuple(int(i) for i in ids))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.master_seed), spawn_key=self._key())

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())


def as_generator(rng) -> np.random.Generator:
    """Normalize an RngStream, integer seed, SeedSequence, or Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.SeedSequence):
        return np.random.default_rng(rng)
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    if rng is None:
        raise ValueError(
            "an explicit rng is required (RngStream, numpy Generator, or integer seed);"
            " implicit entropy would break reproducibility"
        )
    raise TypeError(f"cannot interpret {type(rng).__name__} as a random generator")
