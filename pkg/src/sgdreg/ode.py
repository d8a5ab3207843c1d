"""Reduced two-dimensional dynamics of (w1, ||w_perp||) and its predictions.

The full d-dimensional SGD concentrates on two summary coordinates whose
deterministic drift is

    dw1/dt  = g1(lam, r)                     (- Lambda w1)
    dwp/dt  = g_perp(lam, r) + T n / (2 wp)  (- Lambda wp)

with the population averages of ``theory`` evaluated at lam = w1/wp,
r = kappa sqrt(d)/wp.  The T n/(2 wp) term is the radial drift generated
by the minibatch noise; it balances g_perp < 0 at the steady state
wp = k_perp T sqrt(d).  This module integrates that system, evaluates the
closed-form late-time solution, and computes the predicted crossover and
weight-decay stationary quantities.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import theory
from .distribution import DataDistribution
from .perceptron import FLOAT_FMT, ModelParams

ODE_RTOL = 1e-8
ODE_CSV_HEADER = ["t", "w1", "wp", "lambda", "n_theory"]
# relative scale of the (eps, eps) pure-theory start, in units of T sqrt(d)
INIT_EPS = 1e-6
WP_FLOOR = 1e-12


@dataclass(frozen=True)
class SummaryState:
    """The two summary coordinates at one time."""

    w1: float
    wp: float
    t: float

    def __post_init__(self):
        if self.wp < 0:
            raise ValueError("wp must be >= 0")

    @property
    def lam(self) -> float:
        return self.w1 / self.wp if self.wp > 0 else math.inf


@dataclass(frozen=True)
class TheoryPrediction:
    """Closed-form late-time quantities for one (chi, T, d, P) setting.

    ``n_prefactor`` records the order-one constant c fixed to 1 in the
    crossover condition n = c d/P; fits may calibrate it a posteriori.
    """

    chi: float
    T: float
    d: int
    P: int
    wp_steady: float
    lam_hat: float
    t_hat: float
    w1_hat: float
    w1_L: float
    Lambda_star: float
    n_prefactor: float = 1.0

    def w1_of_t(self, t) -> np.ndarray | float:
        k = theory.asymptotic_constants(self.chi)
        tau = np.asarray(t, dtype=float) / (self.T * self.d)
        out = k.k1 * self.T * math.sqrt(self.d) * tau ** (1.0 / (3.0 + self.chi))
        return out if out.ndim else float(out)

    def n_of_t(self, t) -> np.ndarray | float:
        k = theory.asymptotic_constants(self.chi)
        lam = np.asarray(self.w1_of_t(t)) / self.wp_steady
        out = k.cn * lam ** (-(self.chi + 1.0))
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {
            "chi": self.chi, "T": self.T, "d": self.d, "P": self.P,
            "wp_steady": self.wp_steady, "lam_hat": self.lam_hat,
            "t_hat": self.t_hat, "w1_hat": self.w1_hat,
            "w1_L": self.w1_L, "Lambda_star": self.Lambda_star,
            "n_prefactor": self.n_prefactor,
        }


@dataclass
class ODETrajectory:
    """Integrator output on a geometric time grid."""

    t: np.ndarray
    w1: np.ndarray
    wp: np.ndarray
    lam: np.ndarray
    n: np.ndarray

    def state(self, i: int) -> SummaryState:
        return SummaryState(w1=float(self.w1[i]), wp=float(self.wp[i]),
                            t=float(self.t[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ODE_CSV_HEADER)
            for row in zip(self.t, self.w1, self.wp, self.lam, self.n):
                writer.writerow([FLOAT_FMT % v for v in row])


class IntegrationError(RuntimeError):
    """The adaptive integrator failed (step-size underflow near wp -> 0)."""


def default_init(T: float, d: int) -> SummaryState:
    """Pure-theory start just off the w = 0 singularity."""
    eps = INIT_EPS * T * math.sqrt(d)
    return SummaryState(w1=eps, wp=eps, t=0.0)


def first_step_init(params: ModelParams) -> SummaryState:
    """Expected state after one SGD step from zero weights.

    All points are unfitted at w = 0, so E[w1] = eta E|x1|/sqrt(d) and
    ||w_perp|| concentrates on eta sqrt(B(d-1))/(B sqrt(d)) ~ eta/sqrt(B).
    """
    d = params.dist.dim
    w1 = params.eta * theory.mean_abs_x1(params.dist.chi) / math.sqrt(d)
    wp = params.eta * math.sqrt(params.B * (d - 1)) / (params.B * math.sqrt(d))
    return SummaryState(w1=w1, wp=wp, t=params.eta)


def _rhs(dist: DataDistribution, T: float, kappa: float, Lambda: float):
    sqd = math.sqrt(dist.dim)

    def rhs(t, y):
        w1, wp = y
        wp = max(wp, WP_FLOOR)
        coords = theory.ReducedCoords(lam=max(w1, 0.0) / wp, r=kappa * sqd / wp)
        dw1 = theory.g1(dist, coords) - Lambda * w1
        dwp = (theory.g_perp(dist, coords)
               + T * theory.n_frac(dist, coords) / (2.0 * wp)
               - Lambda * wp)
        return (dw1, dwp)

    return rhs


def integrate(params: ModelParams, t_end: float,
              init: SummaryState | None = None,
              n_points: int = 200) -> ODETrajectory:
    """Integrate the reduced dynamics up to time t_end.

    Adaptive explicit Runge-Kutta (the drifts are smooth power laws, no
    stiffness); output on a geometric grid of ``n_points`` times.  The
    temperature, data model, margin and weight decay are taken from
    ``params``; eta and B enter only through T = eta/B.
    """
    dist = params.dist
    T = params.temperature
    if init is None:
        init = default_init(T, dist.dim)
    if init.wp <= 0:
        raise ValueError("init.wp must be > 0 (reduced dynamics undefined at 0)")
    if t_end <= init.t:
        raise ValueError("t_end must exceed the initial time")

    t_lo = max(init.t, min(T * dist.dim / 100.0, t_end / 1000.0))
    grid = np.geomspace(t_lo, t_end, n_points)
    if init.t < t_lo:
        grid = np.concatenate([[init.t], grid])

    def wp_underflow(t, y):
        return y[1] - WP_FLOOR

    wp_underflow.terminal = True

    sol = solve_ivp(
        _rhs(dist, T, params.kappa, params.weight_decay),
        (init.t, t_end), [init.w1, init.wp],
        method="RK45", rtol=ODE_RTOL, atol=ODE_RTOL * INIT_EPS * T,
        t_eval=grid, events=wp_underflow,
    )
    if sol.status == 1:
        raise IntegrationError("wp reached 0; reduced dynamics terminated")
    if not sol.success:
        raise IntegrationError(sol.message)

    w1, wp = sol.y
    lam = np.where(wp > 0, np.maximum(w1, 0.0) / np.maximum(wp, WP_FLOOR), np.inf)
    r = params.kappa * math.sqrt(dist.dim) / np.maximum(wp, WP_FLOOR)
    n = np.array([
        theory.n_frac(dist, theory.ReducedCoords(lam=float(l), r=float(ri)))
        for l, ri in zip(lam, r)
    ])
    return ODETrajectory(t=sol.t, w1=w1, wp=wp, lam=lam, n=n)


def asymptotic_solution(chi: float, T: float, d: int, t) -> SummaryState:
    """Closed-form late-time solution; valid for t >= Td (lam >= order 1)."""
    t = float(t)
    if t < T * d:
        raise ValueError("asymptotic solution valid only for t >= T*d")
    k = theory.asymptotic_constants(chi)
    w1 = k.k1 * T * math.sqrt(d) * (t / (T * d)) ** (1.0 / (3.0 + chi))
    return SummaryState(w1=w1, wp=k.k_perp * T * math.sqrt(d), t=t)


def predict_crossover(chi: float, T: float, d: int, P: int,
                      Lambda: float = 0.0,
                      n_prefactor: float = 1.0) -> TheoryPrediction:
    """Crossover time/weight where the finite training set is memorized.

    Solves n(lam) = n_prefactor * d/P on the asymptotic branch
    n = c_n lam^{-(chi+1)} and maps lam back to time through the power-law
    solution.  For P <~ d the crossover happens before the asymptotic
    regime and the prediction is only indicative.
    """
    if P < d:
        import warnings

        warnings.warn("predict_crossover assumes P >> d", stacklevel=2)
    k = theory.asymptotic_constants(chi)
    lam_hat = (k.cn * P / (n_prefactor * d)) ** (1.0 / (1.0 + chi))
    t_hat = T * d * (lam_hat * k.k_perp / k.k1) ** (chi + 3.0)
    w1_hat = k.k_perp * T * math.sqrt(d) * lam_hat
    return TheoryPrediction(
        chi=chi, T=T, d=d, P=P,
        wp_steady=k.k_perp * T * math.sqrt(d),
        lam_hat=lam_hat, t_hat=t_hat, w1_hat=w1_hat,
        w1_L=stationary_w1(chi, T, d, Lambda),
        Lambda_star=lambda_star(chi, T, d, P),
        n_prefactor=n_prefactor,
    )


def stationary_w1(chi: float, T: float, d: int, Lambda: float) -> float:
    """Weight-decay stationary overlap, where g1 balances Lambda w1.

    Scales as T^{(chi+2)/(chi+3)} Lambda^{-1/(chi+3)}; returns 0 for
    Lambda = 0 (no stationary point without decay).
    """
    if Lambda < 0:
        raise ValueError("Lambda must be >= 0")
    if Lambda == 0.0:
        return 0.0
    k = theory.asymptotic_constants(chi)
    wp = k.k_perp * T * math.sqrt(d)
    return (k.c1 * wp ** (chi + 2.0) / (Lambda * math.sqrt(d))) ** (1.0 / (chi + 3.0))


def lambda_star(chi: float, T: float, d: int, P: int) -> float:
    """Largest weight decay that still lets w1 reach the crossover value.

    Equating stationary_w1 to w1_hat gives
    Lambda* = c1 / (k_perp T d lam_hat^{chi+3}) ~ T^{-1} P^{-b}.
    """
    k = theory.asymptotic_constants(chi)
    lam_hat = (k.cn * P / d) ** (1.0 / (1.0 + chi))
    return k.c1 / (k.k_perp * T * d * lam_hat ** (chi + 3.0))


def stationary_test_error(chi: float, T: float, d: int, Lambda: float) -> float:
    """Asymptotic test error at the weight-decay stationary state.

    epsilon = c_n lam_L^{-(chi+1)} with lam_L = (c1/(k_perp T d Lambda))^{1/(chi+3)},
    i.e. epsilon ~ (T Lambda)^{(chi+1)/(chi+3)} at fixed d.
    """
    if Lambda <= 0:
        raise ValueError("Lambda must be > 0")
    k = theory.asymptotic_constants(chi)
    lam_L = (k.c1 / (k.k_perp * T * d * Lambda)) ** (1.0 / (chi + 3.0))
    return k.cn * lam_L ** (-(chi + 1.0))


def predict_Tc(kappa: float) -> float:
    """Temperature scale separating the kappa- and T-dominated weight norms.

    A scale, not a sharp line: unit prefactor by convention.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    return kappa


def predict_Bstar(chi: float, P: int) -> float:
    """Batch-size scale beyond which the first step dominates: P^{1/(1+chi)}."""
    if P < 1:
        raise ValueError("P must be >= 1")
    return float(P) ** (1.0 / (1.0 + chi))


def save_prediction(pred: TheoryPrediction, path) -> None:
    with open(path, "w") as fh:
        json.dump(pred.to_dict(), fh, indent=2)
