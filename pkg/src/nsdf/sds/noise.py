"""Counter-based Gaussian noise, reproducible across processes.

Stream definition (shared verbatim with the guidance service): Philox 4x32-10
keyed with the 64-bit seed (key0 = low word, key1 = high word); the counter
for output index i is (i & 0xffffffff, i >> 32, 0, 0).  The first two output
words feed one Box-Muller draw: u1 = (x0 + 0.5) / 2^32, u2 = (x1 + 0.5) / 2^32,
z = sqrt(-2 ln u1) * cos(2 pi u2).  Stateless in the index, so any slice of
the stream can be regenerated directly.
"""

from __future__ import annotations

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint32(0x9E3779B9)
PHILOX_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)


def philox4x32(seed: int, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Philox 4x32-10 words for the given output indices (uint64 array)."""
    indices = np.asarray(indices, dtype=np.uint64)
    c0 = (indices & _MASK32).astype(np.uint32)
    c1 = (indices >> np.uint64(32)).astype(np.uint32)
    c2 = np.zeros_like(c0)
    c3 = np.zeros_like(c0)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    k0 = np.uint32(seed & 0xFFFFFFFF)
    k1 = np.uint32((seed >> 32) & 0xFFFFFFFF)
    for rnd in range(10):
        prod0 = PHILOX_M0 * c0.astype(np.uint64)
        prod1 = PHILOX_M1 * c2.astype(np.uint64)
        lo0 = (prod0 & _MASK32).astype(np.uint32)
        hi0 = (prod0 >> np.uint64(32)).astype(np.uint32)
        lo1 = (prod1 & _MASK32).astype(np.uint32)
        hi1 = (prod1 >> np.uint64(32)).astype(np.uint32)
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        if rnd < 9:
            k0 = np.uint32((int(k0) + int(PHILOX_W0)) & 0xFFFFFFFF)
            k1 = np.uint32((int(k1) + int(PHILOX_W1)) & 0xFFFFFFFF)
    return c0, c1, c2, c3


def gaussian_noise(seed: int, count: int, start_index: int = 0) -> np.ndarray:
    """Standard-normal float64 stream values [start_index, start_index + count)."""
    idx = np.arange(start_index, start_index + count, dtype=np.uint64)
    x0, x1, _, _ = philox4x32(seed, idx)
    inv = 1.0 / 4294967296.0
    u1 = (x0.astype(np.float64) + 0.5) * inv
    u2 = (x1.astype(np.float64) + 0.5) * inv
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def noise_image(seed: int, shape: tuple[int, ...]) -> np.ndarray:
    """Gaussian noise tensor with counter = flat pixel index."""
    n = int(np.prod(shape))
    return gaussian_noise(seed, n).reshape(shape)


class FrozenNoise:
    """Per-run fixed noise: one seed, one cached tensor per image shape."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def noise_for(self, shape: tuple[int, ...]) -> np.ndarray:
        key = tuple(int(s) for s in shape)
        if key not in self._cache:
            self._cache[key] = noise_image(self.seed, key)
        return self._cache[key]
