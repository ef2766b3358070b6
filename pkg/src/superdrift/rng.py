"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream_id)``.  Streams are independent of the order in which they
are created, so results do not depend on how work is split across threads.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseSeed", "generator", "stage_seed"]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseSeed:
    """A 64-bit seed plus a stream index."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return generator(self.seed, self.stream_id)

    def child(self, stream_id: int) -> "NoiseSeed":
        return NoiseSeed(self.seed, stream_id)


def generator(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Philox generator with key ``(seed, stream_id)``."""
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stage_seed(root: int, stage: str) -> int:
    """Derive a per-stage 64-bit seed from the root seed and the stage name."""
    ss = np.random.SeedSequence([int(root) & _MASK64, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
