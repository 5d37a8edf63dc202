"""Portable 64-bit PRNG used everywhere randomness touches files or training.

The generator is pinned to a named algorithm so that seeds reproduce across
implementations and languages, not just across runs of this package:

* state initialization: splitmix64 (Steele, Lea, Flood 2014) applied to the
  user seed, producing the four 64-bit words of the xoshiro state;
* stream: xoshiro256** (Blackman, Vigna 2018);
* uniform doubles: top 53 bits, ``(x >> 11) * 2**-53`` in [0, 1);
* gaussians: Box-Muller on ``(1 - u1, u2)`` (cos first, sin cached);
* bounded integers: rejection sampling on ``2**64 - (2**64 % n)``;
* shuffles: Fisher-Yates from the last index down, ``j = randbelow(i + 1)``.

The algorithm identifier recorded in task manifests is
:data:`PRNG_ALGORITHM`.
"""

from __future__ import annotations

import math

MASK64 = 0xFFFFFFFFFFFFFFFF

PRNG_ALGORITHM = "splitmix64-xoshiro256starstar-v1"

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_next(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once; returns (new_state, output)."""
    state = (state + _SPLITMIX_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    z = z ^ (z >> 31)
    return state, z


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def derive_seed(seed: int, *tags: int | str) -> int:
    """Derive an independent sub-seed from a base seed and a tag path.

    Each tag (string tags are FNV-1a hashed first) is absorbed by xoring it
    into the running splitmix64 state and advancing once. Deterministic and
    order sensitive.
    """
    state = seed & MASK64
    value = splitmix64_next(state)[1]
    for tag in tags:
        word = _fnv1a64(tag) if isinstance(tag, str) else tag & MASK64
        state, value = splitmix64_next(state ^ word)
    return value


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** stream seeded through splitmix64. Not thread safe."""

    __slots__ = ("s0", "s1", "s2", "s3", "_gauss_cache")

    def __init__(self, seed: int):
        state = seed & MASK64
        state, self.s0 = splitmix64_next(state)
        state, self.s1 = splitmix64_next(state)
        state, self.s2 = splitmix64_next(state)
        state, self.s3 = splitmix64_next(state)
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        result = (_rotl((self.s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (self.s1 << 17) & MASK64
        self.s2 ^= self.s0
        self.s3 ^= self.s1
        self.s1 ^= self.s2
        self.s0 ^= self.s3
        self.s2 ^= t
        self.s3 = _rotl(self.s3, 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def gaussian(self) -> float:
        """Standard normal via Box-Muller; generates pairs, caches the sine."""
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
            return z
        u1 = 1.0 - self.random()  # (0, 1], keeps log away from zero
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._gauss_cache = r * math.sin(theta)
        return r * math.cos(theta)

    def gaussians(self, count: int) -> list[float]:
        return [self.gaussian() for _ in range(count)]

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        bound = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < bound:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, last index downward."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items
