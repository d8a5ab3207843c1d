"""Anisotropic data model: one informative coordinate, Gaussian bulk.

The informative coordinate has density |x|^chi exp(-x^2/2)/Z on the real
line; the remaining dim-1 coordinates are i.i.d. standard normal and the
label is the sign of the informative coordinate.  Larger chi depletes the
region near the decision boundary and makes the task easier.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .rng import philox

DUMP_MAGIC = "sgdreg-dataset v1"


@dataclass(frozen=True)
class DataDistribution:
    """Data model parameters: boundary exponent chi > -1 and dimension >= 2."""

    chi: float = 1.0
    dim: int = 128

    def __post_init__(self):
        if not np.isfinite(self.chi) or self.chi <= -1:
            raise ValueError(f"chi must be > -1, got {self.chi}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")

    @property
    def norm_const(self) -> float:
        """Normalization Z = 2^((1+chi)/2) Gamma((1+chi)/2)."""
        a = (1.0 + self.chi) / 2.0
        return float(np.exp(a * np.log(2.0) + gammaln(a)))

    def pdf(self, x1) -> np.ndarray | float:
        """Density of the informative coordinate, |x1|^chi e^{-x1^2/2}/Z."""
        x1 = np.asarray(x1, dtype=float)
        if not np.all(np.isfinite(x1)):
            raise ValueError("non-finite x1")
        if self.chi < 0 and np.any(x1 == 0.0):
            raise ValueError("pdf diverges at x1=0 for chi < 0")
        with np.errstate(divide="ignore"):
            out = np.abs(x1) ** self.chi * np.exp(-x1 * x1 / 2.0) / self.norm_const
        return out if out.ndim else float(out)

    def sample_x1(self, rng: np.random.Generator, size=None) -> np.ndarray | float:
        """Draw from the informative-coordinate density.

        Exact transform: |x1| = sqrt(2 G) with G ~ Gamma((1+chi)/2), sign
        uniform.  Exact zeros (possible only in floating point) are resampled
        so the label is always defined.
        """
        n = 1 if size is None else int(size)
        g = rng.gamma((1.0 + self.chi) / 2.0, 1.0, size=n)
        sign = rng.integers(0, 2, size=n) * 2 - 1
        x = sign * np.sqrt(2.0 * g)
        bad = x == 0.0
        while np.any(bad):
            g = rng.gamma((1.0 + self.chi) / 2.0, 1.0, size=int(bad.sum()))
            s = rng.integers(0, 2, size=int(bad.sum())) * 2 - 1
            x[bad] = s * np.sqrt(2.0 * g)
            bad = x == 0.0
        return float(x[0]) if size is None else x

    def sample_datum(self, rng: np.random.Generator) -> "Datum":
        x1 = self.sample_x1(rng)
        x_perp = rng.standard_normal(self.dim - 1)
        return Datum(x1=x1, x_perp=x_perp, label=1 if x1 > 0 else -1)


@dataclass(frozen=True)
class Datum:
    x1: float
    x_perp: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    """Immutable training set; regeneration with the same seed is bit-identical."""

    x1: np.ndarray           # (P,)
    x_perp: np.ndarray       # (P, dim-1)
    labels: np.ndarray       # (P,) in {-1, +1}
    seed: int
    params: DataDistribution = field(compare=False)

    @property
    def size(self) -> int:
        return self.x1.shape[0]

    def dump(self, path) -> None:
        """Binary dump: one header line, then little-endian f64 rows [x1, x_perp...]."""
        header = (
            f"{DUMP_MAGIC} chi={self.params.chi!r} d={self.params.dim} "
            f"P={self.size} seed={self.seed}\n"
        )
        rows = np.hstack([self.x1[:, None], self.x_perp]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(header.encode())
            fh.write(rows.tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        header = fh.readline().decode().strip()
        blob = fh.read()
    if not header.startswith(DUMP_MAGIC):
        raise ValueError(f"not a dataset dump: {header!r}")
    meta = dict(kv.split("=") for kv in header.split()[2:])
    dist = DataDistribution(chi=float(meta["chi"]), dim=int(meta["d"]))
    p = int(meta["P"])
    rows = np.frombuffer(blob, dtype="<f8").reshape(p, dist.dim)
    x1 = rows[:, 0].copy()
    return Dataset(
        x1=x1,
        x_perp=rows[:, 1:].copy(),
        labels=np.where(x1 > 0, 1, -1).astype(np.int8),
        seed=int(meta["seed"]),
        params=dist,
    )


def generate_dataset(dist: DataDistribution, P: int, seed: int) -> Dataset:
    """Deterministic dataset on the 'dataset' stream of the given seed."""
    if P < 1:
        raise ValueError("P must be >= 1")
    rng = philox(seed, "dataset")
    x1 = dist.sample_x1(rng, size=P)
    x_perp = rng.standard_normal((P, dist.dim - 1))
    labels = np.where(x1 > 0, 1, -1).astype(np.int8)
    ds = Dataset(x1=x1, x_perp=x_perp, labels=labels, seed=int(seed), params=dist)
    for arr in (ds.x1, ds.x_perp, ds.labels):
        arr.setflags(write=False)
    return ds
