"""SplitMix64: a tiny, fully specified 64-bit generator.

Used wherever a result must be reproducible independently of numpy's
generator internals (split shuffles, enrollment picks, trial sub-sampling).
"""
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z):
    """The SplitMix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text):
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def derive_seed(seed, *keys):
    """Mix a base seed with integer or string keys into a new 64-bit seed."""
    state = seed & MASK64
    for key in keys:
        if isinstance(key, str):
            key = fnv1a64(key)
        state = mix64(state ^ mix64((key + GOLDEN) & MASK64))
    return state


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def below(self, n):
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("bound must be positive")
        # reject the low 2**64 mod n values
        threshold = (MASK64 + 1 - n) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def shuffle(self, items):
        """Fisher-Yates shuffle in place, from the last position down."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample_indices(self, n, k):
        """k distinct indices from range(n), returned in ascending order.

        Partial Fisher-Yates over a virtual identity array; O(k) time and memory.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        swapped = {}
        picked = []
        for i in range(k):
            j = i + self.below(n - i)
            picked.append(swapped.get(j, j))
            swapped[j] = swapped.get(i, i)
        picked.sort()
        return picked
