"""Portable seeded randomness for reproducible assignments.

Split and fold assignments must reproduce bit-for-bit from one 64-bit
seed regardless of platform or library version, so shuffling runs on a
self-contained xoshiro256** generator seeded through splitmix64 (both
implemented from their published reference algorithms). Derived streams
are keyed by the seed plus a list of tags, so independent pipeline
stages never share a stream.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(x: int) -> int:
    """splitmix64 output function (finalizer)."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def _tag_to_int(tag) -> int:
    if isinstance(tag, str):
        return _fnv1a64(tag)
    if isinstance(tag, int):
        return tag & _MASK64
    raise TypeError(f"stream tags must be int or str, got {type(tag).__name__}")


def derive_key(seed: int, *tags) -> int:
    """Fold (seed, tags...) into a single 64-bit stream key."""
    key = seed & _MASK64
    for tag in tags:
        key = _mix64((key + _SPLITMIX_GAMMA) ^ _tag_to_int(tag))
    return key


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class PortableRng:
    """xoshiro256** stream with unbiased integer draws."""

    def __init__(self, state: tuple[int, int, int, int]):
        if not any(state):
            state = (1, 2, 3, 4)  # all-zero state is a fixed point
        self._s = list(s & _MASK64 for s in state)

    @classmethod
    def from_seed(cls, seed: int, *tags) -> "PortableRng":
        """Stream keyed by a 64-bit seed plus int/str tags."""
        x = derive_key(seed, *tags)
        words = []
        for _ in range(4):
            x = (x + _SPLITMIX_GAMMA) & _MASK64
            words.append(_mix64(x))
        return cls(tuple(words))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = ((1 << 64) // n) * n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def shuffled(self, items) -> list:
        out = list(items)
        self.shuffle(out)
        return out

    def choice(self, items):
        return items[self.randbelow(len(items))]
