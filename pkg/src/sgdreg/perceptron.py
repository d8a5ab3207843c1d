"""Hinge-loss perceptron student and its minibatch SGD training loop.

The student is f(w, x) = w.x/sqrt(d) trained on teacher labels sign(x1)
with margin kappa.  Weights start at zero and are tracked through the
split (w1, w_perp).  The unfitted-point test is strict (y f < kappa), so
the stopping condition is exact in floating point.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import theory
from ._kernels import evaluate_margins, run_steps
from .distribution import DataDistribution, Dataset, generate_dataset
from .rng import BatchStream, derive_seed

OVERFLOW_GUARD = 1e12
RECORD_RATIO = 1.3
FLOAT_FMT = "%.17g"

RUN_CSV_HEADER = [
    "step", "t", "w1", "w_perp_norm", "lambda", "r",
    "train_loss", "n_train", "test_error", "alignment",
]


@dataclass(frozen=True)
class ModelParams:
    """Problem instance plus algorithm knobs."""

    dist: DataDistribution = DataDistribution()
    P: int = 8192
    kappa: float = 2.0**-7
    eta: float = 16.0
    B: int = 8
    momentum: float = 0.0
    weight_decay: float = 0.0
    max_steps: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if not (1 <= self.B <= self.P):
            raise ValueError(f"need 1 <= B <= P, got B={self.B}, P={self.P}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")

    @property
    def temperature(self) -> float:
        return self.eta / self.B

    @classmethod
    def from_temperature(cls, T: float, B: int, **kwargs) -> "ModelParams":
        return cls(eta=T * B, B=B, **kwargs)

    def to_dict(self) -> dict:
        return {
            "chi": self.dist.chi, "d": self.dist.dim, "P": self.P,
            "kappa": self.kappa, "eta": self.eta, "B": self.B,
            "T": self.temperature, "momentum": self.momentum,
            "weight_decay": self.weight_decay, "max_steps": self.max_steps,
            "seed": self.seed,
        }


@dataclass
class PerceptronState:
    """Student weights split along the teacher direction, plus step counter."""

    w1: float
    w_perp: np.ndarray
    velocity: np.ndarray
    step: int
    eta: float

    @property
    def t(self) -> float:
        return self.step * self.eta

    @property
    def w_perp_norm(self) -> float:
        return float(np.linalg.norm(self.w_perp))

    @classmethod
    def zero(cls, dim: int, eta: float) -> "PerceptronState":
        return cls(w1=0.0, w_perp=np.zeros(dim - 1), velocity=np.zeros(dim),
                   step=0, eta=eta)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.w1], self.w_perp])


@dataclass(frozen=True)
class Observables:
    train_loss: float
    n_train: float
    test_error: float
    alignment: float
    w1: float
    w_perp_norm: float
    lam: float
    r: float


@dataclass
class RunRecord:
    """Time series of observables for one training run."""

    params: ModelParams
    steps: np.ndarray
    t: np.ndarray
    w1: np.ndarray
    w_perp_norm: np.ndarray
    lam: np.ndarray
    r: np.ndarray
    train_loss: np.ndarray
    n_train: np.ndarray
    test_error: np.ndarray
    alignment: np.ndarray
    stop_reason: str = "max_steps"
    t_star: float | None = None

    @property
    def diverged(self) -> bool:
        return self.stop_reason == "diverged"

    def final(self) -> Observables:
        i = -1
        return Observables(
            train_loss=float(self.train_loss[i]), n_train=float(self.n_train[i]),
            test_error=float(self.test_error[i]), alignment=float(self.alignment[i]),
            w1=float(self.w1[i]), w_perp_norm=float(self.w_perp_norm[i]),
            lam=float(self.lam[i]), r=float(self.r[i]),
        )

    def to_csv(self, path) -> None:
        cols = [self.steps, self.t, self.w1, self.w_perp_norm, self.lam, self.r,
                self.train_loss, self.n_train, self.test_error, self.alignment]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RUN_CSV_HEADER)
            for row in zip(*cols):
                writer.writerow([f"{int(row[0])}"] + [FLOAT_FMT % v for v in row[1:]])

    def sidecar(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "stop_reason": self.stop_reason,
            "t_star": self.t_star,
        }

    def save(self, csv_path, json_path) -> None:
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2)


def hinge_loss(state: PerceptronState, dataset: Dataset, kappa: float) -> float:
    """Mean of max(0, kappa - y f(w, x)) over the training set."""
    if dataset.size == 0:
        raise ValueError("empty dataset")
    loss, _ = evaluate_margins(state.as_vector(), dataset.x1, dataset.x_perp,
                               dataset.labels.astype(np.float64), kappa)
    return loss


def unfitted_fraction(state: PerceptronState, dataset: Dataset, kappa: float) -> float:
    """Fraction of training points with y f(w, x) < kappa (strict)."""
    _, n = evaluate_margins(state.as_vector(), dataset.x1, dataset.x_perp,
                            dataset.labels.astype(np.float64), kappa)
    return n


def observables(state: PerceptronState, dataset: Dataset,
                kappa: float) -> Observables:
    dist = dataset.params
    loss, n = evaluate_margins(state.as_vector(), dataset.x1, dataset.x_perp,
                               dataset.labels.astype(np.float64), kappa)
    wp = state.w_perp_norm
    if wp > 0.0:
        lam = state.w1 / wp
        r = kappa * math.sqrt(dist.dim) / wp
        test_err = theory.analytic_test_error(dist, max(lam, 0.0))
    else:
        lam = math.inf
        r = math.inf
        test_err = 0.0 if state.w1 > 0 else 0.5
    alignment = state.w1 / math.sqrt(dist.dim) * theory.mean_abs_x1(dist.chi)
    return Observables(train_loss=loss, n_train=n, test_error=test_err,
                       alignment=alignment, w1=state.w1, w_perp_norm=wp,
                       lam=lam, r=r)


def sgd_step(state: PerceptronState, dataset: Dataset, params: ModelParams,
             stream: BatchStream) -> PerceptronState:
    """One minibatch update; the stream advances by B draws."""
    w = state.as_vector()
    v = state.velocity.copy()
    grad = np.empty_like(w)
    counter = run_steps(
        w, v, dataset.x1, dataset.x_perp, dataset.labels.astype(np.float64),
        params.eta, params.B, params.kappa, params.momentum, params.weight_decay,
        np.uint64(stream.seed), np.uint64(stream.counter), stream.perm, 1, grad,
    )
    stream.counter = int(counter)
    return PerceptronState(w1=float(w[0]), w_perp=w[1:], velocity=v,
                           step=state.step + 1, eta=params.eta)


def recording_steps(max_steps: int):
    """Dense first 10 steps, then geometric with ratio RECORD_RATIO."""
    out = list(range(0, min(10, max_steps) + 1))
    s = 10
    while s < max_steps:
        s = max(s + 1, int(s * RECORD_RATIO))
        out.append(min(s, max_steps))
    return sorted(set(out))


def train(params: ModelParams, dataset: Dataset | None = None) -> RunRecord:
    """Run SGD until all points are fitted, divergence, or the step cap.

    Convergence and divergence are tested on the recording schedule (the
    full-dataset pass is too costly per step), so t_star carries a
    resolution of one recording interval.  With weight decay the dynamics
    never stops on its own and always runs to max_steps.
    """
    dist = params.dist
    if dataset is None:
        dataset = generate_dataset(dist, params.P, params.seed)
    if dataset.size != params.P:
        raise ValueError("dataset size does not match params.P")

    stream = BatchStream(derive_seed(params.seed, "batches"), params.P)
    w = np.zeros(dist.dim)
    v = np.zeros(dist.dim)
    grad = np.empty_like(w)
    labels = dataset.labels.astype(np.float64)
    seed64 = np.uint64(stream.seed)

    rows: list[Observables] = []
    steps_out: list[int] = []
    stop_reason = "max_steps"
    t_star = None
    can_stop = params.weight_decay == 0.0

    def snapshot(step):
        state = PerceptronState(w1=float(w[0]), w_perp=w[1:].copy(),
                                velocity=v, step=step, eta=params.eta)
        return observables(state, dataset, params.kappa)

    prev = 0
    for target in recording_steps(params.max_steps):
        if target > prev:
            counter = run_steps(w, v, dataset.x1, dataset.x_perp, labels,
                                params.eta, params.B, params.kappa,
                                params.momentum, params.weight_decay,
                                seed64, np.uint64(stream.counter), stream.perm,
                                target - prev, grad)
            stream.counter = int(counter)
            prev = target
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > OVERFLOW_GUARD:
            stop_reason = "diverged"
            steps_out.append(target)
            rows.append(Observables(train_loss=math.inf, n_train=1.0,
                                    test_error=0.5, alignment=math.nan,
                                    w1=float(w[0]) if np.isfinite(w[0]) else math.nan,
                                    w_perp_norm=math.inf, lam=math.nan, r=0.0))
            break
        obs = snapshot(target)
        steps_out.append(target)
        rows.append(obs)
        if can_stop and obs.n_train == 0.0:
            stop_reason = "converged"
            t_star = target * params.eta
            break

    steps_arr = np.array(steps_out, dtype=np.int64)
    return RunRecord(
        params=params,
        steps=steps_arr,
        t=steps_arr * params.eta,
        w1=np.array([o.w1 for o in rows]),
        w_perp_norm=np.array([o.w_perp_norm for o in rows]),
        lam=np.array([o.lam for o in rows]),
        r=np.array([o.r for o in rows]),
        train_loss=np.array([o.train_loss for o in rows]),
        n_train=np.array([o.n_train for o in rows]),
        test_error=np.array([o.test_error for o in rows]),
        alignment=np.array([o.alignment for o in rows]),
        stop_reason=stop_reason,
        t_star=t_star,
    )
