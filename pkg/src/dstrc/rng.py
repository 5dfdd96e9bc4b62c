"""Deterministic random number generation for reproducible sampling.

The generator is pinned to a published algorithm so that selections can
be reproduced bit-for-bit from any language, not just this package:

SplitMix64 (Steele, Lea & Flood, "Fast Splittable Pseudorandom Number
Generators", OOPSLA 2014), all arithmetic modulo 2**64::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Bounded draws use rejection sampling (see ``SplitMix64.below``) and
subset selection uses a partial Fisher-Yates shuffle (see
``sample_indices``), both fully specified here.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 stream seeded by a 64-bit integer (wrapped modulo 2**64)."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection: draw 64-bit words,
        discard any >= (2**64 // n) * n, return the first survivor mod n."""
        if n <= 0:
            raise ValueError("bound must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits (top bits of one draw)."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def choice(self, seq):
        return seq[self.below(len(seq))]


def sample_indices(n_total: int, k: int, seed: int) -> list[int]:
    """Select k of n_total indices uniformly without replacement.

    Algorithm (reproducible across implementations): initialize
    idx = [0, 1, ..., n_total-1]; run k steps of a Fisher-Yates shuffle
    driven by SplitMix64(seed), i.e. for i in 0..k-1 swap idx[i] with
    idx[i + below(n_total - i)]; the selection is idx[0..k-1], returned
    sorted ascending so callers preserve original ordering.
    """
    if not 0 <= k <= n_total:
        raise ValueError(f"cannot sample {k} of {n_total}")
    idx = list(range(n_total))
    gen = SplitMix64(seed)
    for i in range(k):
        j = i + gen.below(n_total - i)
        idx[i], idx[j] = idx[j], idx[i]
    return sorted(idx[:k])


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from string/int parts via FNV-1a over the
    "|"-joined decimal/utf-8 rendering. Used to give sub-streams
    independent, documented seeds."""
    data = "|".join(str(p) for p in parts).encode("utf-8")
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h
