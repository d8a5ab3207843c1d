"""Compiled inner loops for SGD training.

The batch stream here reproduces ``rng.BatchStream`` bit for bit: the
j-th random draw is splitmix64(seed, counter+j) and batches come from a
partial Fisher-Yates pass over a persistent permutation.  This keeps the
single-step Python path and the compiled multi-step path on identical
trajectories.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _mix(seed, counter):
    z = seed + (counter + np.uint64(1)) * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def run_steps(w, v, x1, xp, y, eta, batch, kappa, momentum, weight_decay,
              seed, counter, perm, n_steps, grad):
    """Advance the SGD state by ``n_steps`` updates in place.

    w: (d,) weights with w[0] the overlap coordinate; v: (d,) velocity;
    grad: (d,) scratch buffer.  Returns the updated stream counter.
    """
    p = x1.shape[0]
    d = w.shape[0]
    sqd = np.sqrt(np.float64(d))
    scale = eta / (batch * sqd)
    use_mom = momentum > 0.0
    use_wd = weight_decay > 0.0
    c = counter

    for _ in range(n_steps):
        # partial Fisher-Yates: batch = perm[:batch] after the swaps
        for j in range(batch):
            k = j + np.int64(_mix(seed, c) % np.uint64(p - j))
            c += np.uint64(1)
            tmp = perm[j]
            perm[j] = perm[k]
            perm[k] = tmp

        for i in range(d):
            grad[i] = 0.0
        touched = False
        for j in range(batch):
            mu = perm[j]
            s = w[0] * x1[mu]
            for i in range(d - 1):
                s += w[i + 1] * xp[mu, i]
            if y[mu] * s / sqd < kappa:
                touched = True
                ys = np.float64(y[mu])
                grad[0] += ys * x1[mu]
                for i in range(d - 1):
                    grad[i + 1] += ys * xp[mu, i]

        if use_mom:
            for i in range(d):
                v[i] = momentum * v[i] + scale * grad[i]
            if use_wd:
                for i in range(d):
                    w[i] += v[i] - eta * weight_decay * w[i]
            else:
                for i in range(d):
                    w[i] += v[i]
        elif use_wd:
            for i in range(d):
                w[i] += scale * grad[i] - eta * weight_decay * w[i]
        elif touched:
            for i in range(d):
                w[i] += scale * grad[i]
    return c


@njit(cache=True)
def evaluate_margins(w, x1, xp, y, kappa):
    """Training loss and unfitted fraction in one pass."""
    p = x1.shape[0]
    d = w.shape[0]
    sqd = np.sqrt(np.float64(d))
    loss = 0.0
    unfitted = 0
    for mu in range(p):
        s = w[0] * x1[mu]
        for i in range(d - 1):
            s += w[i + 1] * xp[mu, i]
        m = kappa - y[mu] * s / sqd
        if m > 0.0:
            loss += m
            unfitted += 1
    return loss / p, unfitted / p
