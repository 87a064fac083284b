"""Seedable 64-bit PRNG with a fixed, documented stream.

Reproducibility contracts in this package ("same seed, bitwise-identical
dataset / parameters / batch schedule") must not depend on any library's
default generator, so the generator is pinned here:

* state seeding: splitmix64 (Steele/Lea/Flajolet mixer),
* stream: xoshiro256** (Blackman/Vigna),
* doubles: top 53 bits of the next output, ``(u >> 11) * 2**-53``,
* normals: Box-Muller on two consecutive doubles, cosine branch first,
  the sine branch is cached and returned by the next call,
* bounded integers: modulo with rejection of the biased tail,
* child seeds: the i-th child seed of ``seed`` is the (i+1)-th output of a
  splitmix64 stream started at ``seed``.

Reference outputs are frozen in ``tests/test_rng.py`` and repeated in the
README so an implementation in any language can be checked against them.
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_DOUBLE_SCALE = 1.0 / (1 << 53)


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def child_seed(seed: int, index: int) -> int:
    """Derived seed for substream `index` (dataset images, epochs, ...)."""
    if index < 0:
        raise ValueError("substream index must be nonnegative")
    state = seed & _MASK
    out = 0
    for _ in range(index + 1):
        state, out = splitmix64_next(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** stream, seeded from a single 64-bit integer via splitmix64."""

    __slots__ = ("_s", "_cached_normal")

    def __init__(self, seed: int):
        state = seed & _MASK
        s = []
        for _ in range(4):
            state, out = splitmix64_next(state)
            s.append(out)
        self._s = s
        self._cached_normal = None

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via tail rejection."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = _MASK + 1 - ((_MASK + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Standard normal via Box-Muller; pairs share two uniform draws."""
        if self._cached_normal is not None:
            z = self._cached_normal
            self._cached_normal = None
        else:
            # 1 - u keeps the log argument in (0, 1]
            r = math.sqrt(-2.0 * math.log(1.0 - self.random()))
            theta = 2.0 * math.pi * self.random()
            z = r * math.cos(theta)
            self._cached_normal = r * math.sin(theta)
        return mean + std * z

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, high index down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
