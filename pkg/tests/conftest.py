"""Shared oracles for the test suite.

The Monte-Carlo population oracle reduces the d-dimensional average to a
2-d sample (informative coordinate magnitude, one Gaussian projection),
so multi-million-sample checks stay cheap and completely independent of
the quadrature code under test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float

    def within(self, other: float, n_sigma: float = 4.0, floor: float = 1e-9) -> bool:
        return abs(other - self.value) <= n_sigma * self.stderr + floor


def mc_population(chi: float, lam: float, r: float, n_samples: int,
                  seed: int) -> dict[str, MCEstimate]:
    """Monte-Carlo estimates of the population averages at (lam, r).

    Works in the 2-d reduction: |x1| = sqrt(2 G), G ~ Gamma((1+chi)/2),
    z the projection of the orthogonal noise on w_perp.  A point is
    unfitted iff lam |x1| + z < r.  Returns sqrt(d)-free drift values
    (the quadratures times sqrt(d)).
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    chunks = max(1, n_samples // 1_000_000)
    per = n_samples // chunks

    # accumulate raw moments; variances are combined afterwards
    m = {k: [] for k in ("ax", "z", "th", "ax2", "axz", "z2")}
    for _ in range(chunks):
        ax = np.sqrt(2.0 * rng.gamma((1.0 + chi) / 2.0, 1.0, size=per))
        z = rng.standard_normal(per)
        th = (lam * ax + z < r).astype(float)
        m["ax"].append(ax * th)
        m["z"].append(z * th)
        m["th"].append(th)
        m["ax2"].append(ax * ax * th)
        m["axz"].append(ax * z * th)
        m["z2"].append(z * z * th)

    s = {k: np.concatenate(v) for k, v in m.items()}
    n_tot = s["th"].size

    def est(arr) -> MCEstimate:
        return MCEstimate(float(arr.mean()),
                          float(arr.std(ddof=1) / np.sqrt(n_tot)))

    e_ax, e_z, e_th = est(s["ax"]), est(s["z"]), est(s["th"])
    e_ax2, e_axz, e_z2 = est(s["ax2"]), est(s["axz"]), est(s["z2"])

    # delta-method error for the variance combinations (conservative)
    s11 = MCEstimate(e_ax2.value - e_ax.value**2,
                     e_ax2.stderr + 2 * abs(e_ax.value) * e_ax.stderr)
    s12 = MCEstimate(e_axz.value - e_ax.value * e_z.value,
                     e_axz.stderr + abs(e_ax.value) * e_z.stderr
                     + abs(e_z.value) * e_ax.stderr)
    s22 = MCEstimate(e_z2.value - e_z.value**2,
                     e_z2.stderr + 2 * abs(e_z.value) * e_z.stderr)
    return {
        "g1": e_ax, "g_perp": e_z, "n": e_th,
        "s11": s11, "s12": s12, "s22": s22,
    }
