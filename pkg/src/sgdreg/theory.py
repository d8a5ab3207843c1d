"""Population averages of the gradient and minibatch-noise covariance.

Everything here is a one-dimensional quadrature over the informative
coordinate.  All quantities are functions of the reduced coordinates

    lam = w1 / ||w_perp||,    r = kappa sqrt(d) / ||w_perp||,

and the drift components carry an explicit 1/sqrt(d) prefactor.  The
asymptotic (lam -> inf, r -> 0) expansions have closed-form constants
which are also evaluated here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import erf, gammaln

from .distribution import DataDistribution

QUAD_ABS_TOL = 1e-12
QUAD_REL_TOL = 1e-10
# Upper cutoff: for chi <= 6, rho(x) * anything bounded is < 1e-16 beyond this.
X_MAX = 12.0


@dataclass(frozen=True)
class ReducedCoords:
    lam: float
    r: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.r)):
            raise ValueError("reduced coordinates must be finite")
        if self.lam < 0 or self.r < 0:
            raise ValueError("reduced coordinates must be non-negative")


@dataclass(frozen=True)
class TheoryEvaluation:
    """Drift, unfitted fraction and reduced noise covariance at one (lam, r)."""

    g1: float
    g_perp: float
    n: float
    sigma11_tilde: float
    sigma12_tilde: float
    sigma22_tilde: float

    @property
    def sigma1(self) -> float:
        return math.sqrt(self.sigma11_tilde)

    @property
    def sigma2(self) -> float:
        return math.sqrt(self.sigma22_tilde)


@dataclass(frozen=True)
class AsymptoticConstants:
    """Closed-form constants of the lam -> inf, r -> 0 expansions."""

    chi: float
    c1: float
    c2: float
    cn: float
    c11: float
    c22: float

    @property
    def k_perp(self) -> float:
        return self.cn * math.sqrt(math.pi / 2.0)

    @property
    def k1(self) -> float:
        kp = self.k_perp
        return kp * ((self.chi + 3.0) * self.c1 / kp) ** (1.0 / (self.chi + 3.0))

    @property
    def b(self) -> float:
        return 1.0 + 2.0 / (1.0 + self.chi)

    @property
    def gamma(self) -> float:
        return 1.0 / (1.0 + self.chi)


class QuadratureError(RuntimeError):
    """Quadrature failed to converge to the requested tolerance."""


def _quad(f, chi: float, breakpoints=()) -> float:
    """Integrate f(x) * x^chi e^{-x^2/2}/Z over (0, inf).

    For chi < 0 the integrable endpoint singularity is absorbed with the
    substitution u = x^(1+chi); otherwise a plain adaptive rule on
    [0, X_MAX] is accurate to well below the requested tolerance.
    ``breakpoints`` flag interior scales (e.g. the width of a kernel that
    is much narrower than the Gaussian envelope at large lam).
    """
    norm = math.exp(((1.0 + chi) / 2.0) * math.log(2.0) + gammaln((1.0 + chi) / 2.0))
    pts = sorted({p for p in breakpoints if 0.0 < p < X_MAX})

    if chi >= 0:
        def integrand(x):
            return f(x) * x**chi * math.exp(-x * x / 2.0) / norm

        val, err = integrate.quad(
            integrand, 0.0, X_MAX, points=pts or None,
            epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=250,
        )
    else:
        a = 1.0 + chi

        def integrand(u):
            x = u ** (1.0 / a)
            return f(x) * math.exp(-x * x / 2.0) / (a * norm)

        val, err = integrate.quad(
            integrand, 0.0, X_MAX**a, points=[p**a for p in pts] or None,
            epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=250,
        )
    if err > max(QUAD_ABS_TOL * 10.0, abs(val) * 1e-7):
        raise QuadratureError(f"quadrature error estimate {err:g} too large")
    return val


def _kernel_breaks(lam: float, r: float):
    """Interior quadrature breakpoints at the kernel scale (width ~ 1/lam)."""
    if lam <= 0.0:
        return ()
    return tuple((r + u) / lam for u in (-8.0, -2.0, 0.0, 2.0, 8.0, 24.0))


def _phi_terms(lam: float, r: float):
    """The two kernels appearing in every average."""

    def one_plus_erf(x):
        return 1.0 + erf((r - lam * x) / math.sqrt(2.0))

    def gauss(x):
        return math.exp(-0.5 * (r - lam * x) ** 2)

    return one_plus_erf, gauss


def g1(dist: DataDistribution, coords: ReducedCoords) -> float:
    """Drift of the overlap w1, including the 1/sqrt(d) prefactor. Always >= 0."""
    oerf, _ = _phi_terms(coords.lam, coords.r)
    pts = _kernel_breaks(coords.lam, coords.r)
    return _quad(lambda x: x * oerf(x), dist.chi, pts) / math.sqrt(dist.dim)


def g_perp(dist: DataDistribution, coords: ReducedCoords) -> float:
    """Radial drift of ||w_perp||, including 1/sqrt(d). Always <= 0."""
    _, gauss = _phi_terms(coords.lam, coords.r)
    pts = _kernel_breaks(coords.lam, coords.r)
    val = -2.0 / math.sqrt(2.0 * math.pi) * _quad(gauss, dist.chi, pts)
    return val / math.sqrt(dist.dim)


def n_frac(dist: DataDistribution, coords: ReducedCoords) -> float:
    """Population fraction of margin violations, in [0, 1]."""
    oerf, _ = _phi_terms(coords.lam, coords.r)
    val = _quad(oerf, dist.chi, _kernel_breaks(coords.lam, coords.r))
    return min(max(val, 0.0), 1.0)


def sigma_tilde(dist: DataDistribution, coords: ReducedCoords):
    """Entries (S11, S12, S22) of the reduced noise covariance."""
    lam, r = coords.lam, coords.r
    oerf, gauss = _phi_terms(lam, r)
    chi = dist.chi
    pref = 2.0 / math.sqrt(2.0 * math.pi)

    pts = _kernel_breaks(lam, r)
    m2 = _quad(lambda x: x * x * oerf(x), chi, pts)     # E[x1^2 theta]
    m1 = _quad(lambda x: x * oerf(x), chi, pts)         # E[|x1| theta]
    e0 = _quad(gauss, chi, pts)                         # gaussian kernel mass
    e1 = _quad(lambda x: x * gauss(x), chi, pts)
    er = _quad(lambda x: gauss(x) * (r - lam * x), chi, pts)
    n0 = _quad(oerf, chi, pts)

    s11 = m2 - m1 * m1
    s12 = -pref * e1 + pref * m1 * e0
    s22 = n0 - pref * er - (pref * e0) ** 2

    def clip(v, name):
        if v < -1e-10:
            raise QuadratureError(f"negative variance {name}={v:g}")
        return max(v, 0.0)

    return clip(s11, "S11"), s12, clip(s22, "S22")


def evaluate(dist: DataDistribution, coords: ReducedCoords) -> TheoryEvaluation:
    s11, s12, s22 = sigma_tilde(dist, coords)
    return TheoryEvaluation(
        g1=g1(dist, coords),
        g_perp=g_perp(dist, coords),
        n=n_frac(dist, coords),
        sigma11_tilde=s11,
        sigma12_tilde=s12,
        sigma22_tilde=s22,
    )


def analytic_test_error(dist: DataDistribution, lam: float) -> float:
    """Misclassification probability at overlap ratio lam (margin-free)."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if math.isinf(lam):
        return 0.0
    return n_frac(dist, ReducedCoords(lam=lam, r=0.0))


@lru_cache(maxsize=None)
def mean_abs_x1(chi: float) -> float:
    """E[|x1|] under the informative-coordinate density."""
    return 2.0 * _quad(lambda x: x, chi)


def asymptotic_constants(chi: float) -> AsymptoticConstants:
    if chi <= -1:
        raise ValueError("chi must be > -1")
    sqrt_pi = math.sqrt(math.pi)
    c1 = (1.0 + chi) / (math.sqrt(2.0 * math.pi) * (2.0 + chi))
    c2 = 1.0 / math.sqrt(2.0 * math.pi)
    cn = math.exp(gammaln(1.0 + chi / 2.0) - gammaln((3.0 + chi) / 2.0)) / (2.0 * sqrt_pi)
    c11 = 2.0 * math.exp(gammaln(2.0 + chi / 2.0) - gammaln((1.0 + chi) / 2.0)) / (
        sqrt_pi * (3.0 + chi)
    )
    # (2+chi) * cn: the large-lam limit of the S22 quadrature.  Note the
    # Gamma(1+chi/2) factor, which happens to equal 1 at chi = 0 and 2.
    c22 = (2.0 + chi) * cn
    return AsymptoticConstants(chi=chi, c1=c1, c2=c2, cn=cn, c11=c11, c22=c22)


def fluctuation_magnitudes(chi: float, T: float, d: int, lam_t: float):
    """Relative r.m.s. fluctuations of the two summary coordinates.

    Closed-form evaluation of the time-dependent Ornstein-Uhlenbeck
    variances along the asymptotic trajectory, normalized by the
    deterministic solution.  Used as a smallness diagnostic: both vanish
    as d -> inf, and the overlap fluctuation also decays with lam_t.
    """
    if lam_t < 1.0:
        raise ValueError("lam_t must be >= 1 (asymptotic regime)")
    k = asymptotic_constants(chi)
    p = (chi + 2.0) / (chi + 3.0)
    a1 = k.c11 * k.k_perp / ((chi + 3.0) * k.c1)
    z1_sq = a1 * T * T * (1.0 - lam_t ** (-2.0 * (chi + 2.0))) / (2.0 * p)
    w1_hat = k.k_perp * T * math.sqrt(d) * lam_t
    z1_rel = math.sqrt(z1_sq) / w1_hat

    a2 = math.sqrt(2.0 * math.pi) * k.c22 * k.k_perp / 2.0
    decay = 1.0 - math.exp(-(lam_t**2 - 1.0) / (math.sqrt(2.0 * math.pi) * k.c1))
    zp_sq = a2 * T * T * decay
    zp_rel = math.sqrt(zp_sq) / (k.k_perp * T * math.sqrt(d))
    return z1_rel, zp_rel
