"""Deterministic random number generation for reproducible corpora.

Everything that needs randomness (synthetic recordings, negative-window
sampling, classifier stubs) goes through Xoshiro256StarStar seeded via
SplitMix64.  Both algorithms are published with reference implementations,
so a corpus generated here can be reproduced bit for bit by another
implementation in any language, which the stdlib Mersenne Twister does not
guarantee across versions.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once.

    Returns (new_state, output).  Used for seeding and for deriving
    independent child seeds from a master seed.
    """
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Derive a child seed from a master seed and an index.

    Feeds both values through SplitMix64 so neighbouring indices give
    uncorrelated streams.
    """
    state = master_seed & _MASK64
    state, _ = splitmix64(state)
    state = (state ^ (index & _MASK64)) & _MASK64
    _, out = splitmix64(state)
    return out


class Xoshiro256StarStar:
    """xoshiro256** by Blackman and Vigna, seeded with SplitMix64."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive, via rejection sampling."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        # rejection keeps the draw unbiased for spans that do not divide 2^64
        limit = _MASK64 - (_MASK64 + 1) % span
        while True:
            v = self.next_u64()
            if v <= limit:
                return lo + v % span

    def gauss(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Normal deviate via Box-Muller (stateless between pairs).

        The spare deviate is deliberately discarded so each call maps to a
        fixed number of uniform draws, keeping call sequences easy to
        reproduce elsewhere.
        """
        u1 = self.random()
        while u1 <= 1e-300:
            u1 = self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]

    def choice(self, items):
        if not items:
            raise ValueError("cannot choose from an empty sequence")
        return items[self.randint(0, len(items) - 1)]
