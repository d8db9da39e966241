"""64-bit mixing used for every derived seed in the package."""
from __future__ import annotations

MASK64 = (1 << 64) - 1

# generator stream ids appended to a seed: default_rng([seed, STREAM])
FIELD_STREAM = 0
DYNAMICS_STREAM = 1
WALKER_STREAM = 2


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def mix(*words: int) -> int:
    """Chain splitmix64 over the words; order matters."""
    h = 0
    for w in words:
        h = splitmix64(h ^ (int(w) & MASK64))
    return h


def stream(seed: int, stream_id: int):
    import numpy as np

    if seed is None:
        raise ValueError("a seed is required for reproducible lattice streams")
    return np.random.default_rng([int(seed) & MASK64, stream_id])
