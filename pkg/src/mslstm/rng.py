"""xoshiro256** seeded through splitmix64.

The generator is fully specified so synthetic datasets, frame selections and
augmentations can be reproduced bit-for-bit by other implementations.
"""

import math

MASK64 = (1 << 64) - 1


def splitmix64(state):
    """Advance a splitmix64 state. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator.

    Derived draws:
      random()  -> (next >> 11) * 2**-53, in [0, 1)
      normal()  -> Box-Muller cosine branch on (1 - random(), random()); one
                   normal per two uniforms, nothing cached
      randbelow -> rejection sampling on the top of the 64-bit range
    """

    def __init__(self, seed=0, state=None):
        if state is not None:
            if len(state) != 4 or not any(state):
                raise ValueError("state must be four words, not all zero")
            self.s = [int(w) & MASK64 for w in state]
            return
        sm = int(seed) & MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self.s = words

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self):
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, a, b):
        return a + (b - a) * self.random()

    def normal(self, mu=0.0, sigma=1.0):
        u1 = 1.0 - self.random()
        u2 = self.random()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n):
        return [self.normal() for _ in range(n)]

    def randbelow(self, n):
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample_indices(self, n, k):
        """``k`` distinct indices from ``range(n)`` via a partial Fisher-Yates pass."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(seed, *stream):
    """Mix a base seed with integer stream ids into a fresh 64-bit seed."""
    state = int(seed) & MASK64
    state, out = splitmix64(state)
    for s in stream:
        state, out = splitmix64(state ^ (int(s) & MASK64))
    return out
