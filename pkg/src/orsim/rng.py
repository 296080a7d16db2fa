"""Counter-based 64-bit generator used for gallery subset sampling.

The stream is SplitMix64 evaluated at a counter: draw ``i`` (0-based) is
``mix64(key + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``. With ``key`` equal to
the usual SplitMix64 seed this reproduces the reference sequence, e.g. seed
1234567 gives 6457827717110365317, 3203168211198807973, 9817491932198370423.

Subset keys are the first 8 bytes (little-endian) of
``sha256(f"{seed}:{probe_id}:{size}")``. Bounded integers use rejection
sampling on ``r % n`` with limit ``2**64 - (2**64 % n)``.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class CounterRNG:
    """Stateless-by-construction stream: ``at(i)`` never depends on earlier draws."""

    def __init__(self, key: int):
        self.key = key & MASK64
        self.counter = 0

    def at(self, i: int) -> int:
        return mix64(self.key + (i + 1) * GOLDEN_GAMMA)

    def next_u64(self) -> int:
        v = self.at(self.counter)
        self.counter += 1
        return v

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


def subset_key(seed: int, probe_id: str, size: int) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{probe_id}:{int(size)}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def sample_without_replacement(rng: CounterRNG, population: list, k: int) -> list:
    """First ``k`` slots of a forward Fisher-Yates shuffle of ``population``."""
    pool = list(population)
    n = len(pool)
    if k > n:
        raise ValueError(f"cannot draw {k} from {n}")
    for i in range(k):
        j = i + rng.below(n - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]
