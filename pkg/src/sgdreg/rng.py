"""Counter-based random streams with a documented seed-derivation rule.

Two layers are used throughout the package:

* numpy's Philox generator (counter-based) for everything vectorized:
  dataset generation, Monte-Carlo oracles, rotations.
* a splitmix64 stream for per-step batch selection inside the training
  loop.  The same uint64 arithmetic is implemented here (pure Python)
  and in ``_kernels`` (numba), so the single-step and the compiled
  multi-step paths consume identical random numbers.

Stream derivation rule: every consumer derives its own 64-bit seed as
``derive_seed(master, *tags)`` where the tags name the purpose and any
indices, e.g. ``derive_seed(seed, "dataset")`` or
``derive_seed(seed, "cell", cell_index, seed_index)``.  Derivation is a
BLAKE2b hash of the canonical tag string, so streams never collide or
overlap by construction and the mapping is stable across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def derive_seed(master: int, *tags) -> int:
    """Derive a 64-bit sub-stream seed from a master seed and purpose tags."""
    text = repr((int(master),) + tuple(tags)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def philox(master: int, *tags) -> np.random.Generator:
    """A numpy Generator on an independent Philox stream for this purpose."""
    return np.random.Generator(np.random.Philox(key=derive_seed(master, *tags)))


def splitmix64(seed: int, counter: int) -> int:
    """Value of the counter-based splitmix64 stream at position ``counter``."""
    z = (seed + (counter + 1) * _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


class BatchStream:
    """Stateful view of a splitmix64 stream used for minibatch selection.

    Holds the current counter and the running index permutation so that a
    training run can be advanced one step at a time (Python) or in
    compiled segments (numba) with identical results.
    """

    def __init__(self, seed: int, n_items: int):
        self.seed = int(seed) & _MASK
        self.counter = 0
        self.perm = np.arange(n_items, dtype=np.int64)

    def randbelow(self, n: int) -> int:
        value = splitmix64(self.seed, self.counter) % n
        self.counter += 1
        return value

    def draw_batch(self, batch_size: int) -> np.ndarray:
        """Uniform sample of ``batch_size`` distinct indices (partial Fisher-Yates)."""
        perm = self.perm
        n = perm.shape[0]
        for j in range(batch_size):
            k = j + self.randbelow(n - j)
            perm[j], perm[k] = perm[k], perm[j]
        return perm[:batch_size].copy()
