"""Counter-based deterministic random streams.

Every uniform draw is a pure function of (seed, episode, counter), so every
backend (pure-Python, vectorized numpy, or compiled) produces bit-identical
streams, episodes can run in parallel in any order, and nothing is consumed
by policies that do not need randomness.

Scheme: a splitmix64-style finalizer applied to a keyed counter.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
PHI = 0x9E3779B97F4A7C15
PHI2 = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
U01_SCALE = 1.0 / 9007199254740992.0  # 2**-53


def mix64(x: int) -> int:
    """Scalar splitmix64 finalizer (pure Python, wraps modulo 2^64)."""
    x = (x + PHI) & MASK64
    x ^= x >> 30
    x = (x * _M1) & MASK64
    x ^= x >> 27
    x = (x * _M2) & MASK64
    x ^= x >> 31
    return x


def episode_key(seed: int, episode: int) -> int:
    return mix64((seed + mix64(episode + 1)) & MASK64)


def draw_u01(key: int, counter: int) -> float:
    """Uniform in [0, 1) for the given episode key and draw counter."""
    z = mix64(key ^ ((counter + 1) * PHI2 & MASK64))
    return (z >> 11) * U01_SCALE


def mix64_np(x: np.ndarray) -> np.ndarray:
    """Vector splitmix64 finalizer over a uint64 array."""
    x = x + np.uint64(PHI)
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(_M1)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(_M2)
    x = x ^ (x >> np.uint64(31))
    return x


def episode_keys_np(seed: int, episodes: np.ndarray) -> np.ndarray:
    eps = episodes.astype(np.uint64)
    return mix64_np(np.uint64(seed & MASK64) + mix64_np(eps + np.uint64(1)))


def draws_u01_np(keys: np.ndarray, counter: int) -> np.ndarray:
    """One uniform per episode key at a fixed counter."""
    c = np.uint64(((counter + 1) * PHI2) & MASK64)
    z = mix64_np(keys ^ c)
    return (z >> np.uint64(11)).astype(np.float64) * U01_SCALE


# Draw layout within an episode (n channels, d = n + 1 draws per step):
#   counter j            : initial state of channel j, j in [0, n)
#   counter n + t*d + j  : transition of channel j entering slot t+1
#   counter n + t*d + n  : policy randomness for slot t
def init_draw_index(j: int) -> int:
    return j


def step_draw_index(n: int, t: int, j: int) -> int:
    return n + t * (n + 1) + j


def policy_draw_index(n: int, t: int) -> int:
    return n + t * (n + 1) + n
