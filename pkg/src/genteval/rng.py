"""Deterministic 64-bit random number generator.

Sampling must reproduce bit-for-bit across platforms and processes, so
the toolkit pins its own generator instead of relying on library
defaults. The state transition is the splitmix construction:

    state <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z <- state
    z <- (z xor (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
    z <- (z xor (z >> 27)) * 0x94D049BB133111EB   mod 2^64
    output <- z xor (z >> 31)

Uniform doubles take the top 53 bits of the output, giving values in
[0, 1). One `uniform()` call consumes exactly one state transition.
"""

from __future__ import annotations

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """Finalizer of the splitmix transition; also used as a stable hash."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stable_hash(text: str) -> int:
    """Platform-independent 64-bit hash of a string.

    FNV-1a over the UTF-8 bytes, passed through the splitmix finalizer
    so that near-identical keys land far apart. Used to derive per-cell
    and per-sample seeds; must never change across releases.
    """
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return mix64(h)


class SplitMix64:
    """Seedable generator with the transition documented above."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK

    def next_uint64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        return mix64(self.state)

    def uniform(self) -> float:
        """One double in [0, 1), consuming one state transition."""
        return (self.next_uint64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        """Integer in [0, n) via rejection, consuming >= 1 transitions."""
        if n <= 0:
            raise ValueError("randint needs a positive bound")
        # Rejection sampling keeps the draw exactly uniform.
        limit = _MASK - (_MASK + 1) % n
        while True:
            v = self.next_uint64()
            if v <= limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
