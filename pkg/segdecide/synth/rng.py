"""Portable pseudo-random streams for the synthetic generator.

Two generators are used, both defined bit-exactly so scenes are identical on
every platform:

* ``SplitMix64``: the 64-bit mixer seeding everything else. Output ``i``
  (1-based) of a stream started at ``state`` is ``mix(state + i * GOLDEN)``.
* ``Xoshiro256StarStar``: scalar xoshiro256** seeded by four SplitMix64
  outputs; drives the per-object draws.

Per-pixel noise is the SplitMix64 stream evaluated in bulk with numpy
(:func:`hash_uniforms`), so it matches the scalar generator value for value.

Uniform floats are ``((x >> 12) + 0.5) * 2**-52``, exact and strictly inside
(0, 1).
Standard normals are ``scipy.special.ndtri(u)``, the inverse normal CDF.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_UNIT = 2.0**-52


def mix64(value: int) -> int:
    """SplitMix64 finaliser."""
    z = value & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of stream ``index``: first SplitMix64 output of master ⊕ index."""
    return mix64(((master_seed ^ index) + GOLDEN) & MASK64)


def _to_unit(value: int) -> float:
    return ((value >> 12) + 0.5) * _UNIT


class SplitMix64:
    """Scalar SplitMix64 stream."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return _to_unit(self.next_u64())


def _rotl(value: int, shift: int) -> int:
    return ((value << shift) | (value >> (64 - shift))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** with SplitMix64 seeding and a few sampling helpers."""

    def __init__(self, seed: int) -> None:
        seeder = SplitMix64(seed)
        self.state = [seeder.next_u64() for _ in range(4)]

    def next_u64(self) -> int:
        s = self.state
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform float in (0, 1)."""
        return _to_unit(self.next_u64())

    def normal(self) -> float:
        """Standard normal draw by inverse CDF; consumes one uniform."""
        return float(special.ndtri(self.uniform()))

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high]; consumes one uniform."""
        span = high - low + 1
        return low + min(int(self.uniform() * span), span - 1)

    def poisson(self, mean: float) -> int:
        """Poisson draw by multiplying uniforms (Knuth)."""
        if mean <= 0:
            return 0
        limit = math.exp(-mean)
        count, product = 0, self.uniform()
        while product > limit:
            count += 1
            product *= self.uniform()
        return count


def hash_uniforms(seed: int, count: int) -> np.ndarray:
    """Return the first ``count`` SplitMix64 outputs of ``seed`` as (0, 1) floats."""
    with np.errstate(over="ignore"):
        counters = np.arange(1, count + 1, dtype=np.uint64)
        z = counters * np.uint64(GOLDEN) + np.uint64(seed & MASK64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(12)).astype(np.float64) + 0.5) * _UNIT


def hash_normals(seed: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals from :func:`hash_uniforms` in C order."""
    count = int(np.prod(shape, dtype=np.int64))
    return special.ndtri(hash_uniforms(seed, count)).reshape(shape)


def corpus_seeds(master_seed: int, count: int, split: int) -> list[int]:
    """Scene seeds of a split; image ``i`` of split ``s`` uses stream 2i + s."""
    return [derive_seed(master_seed, 2 * index + split) for index in range(count)]
