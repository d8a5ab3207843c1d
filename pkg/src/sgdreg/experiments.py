"""Sweep orchestration, power-law fits, and regime-boundary detectors.

A sweep is a cartesian grid over algorithm knobs, each cell run with
several seeds.  Every (cell, seed) result is persisted as its own JSON
file so interrupted sweeps resume, and the compiled CSV outputs are
deterministic regardless of worker count or completion order.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ode
from .distribution import DataDistribution
from .perceptron import FLOAT_FMT, ModelParams, RunRecord, train
from .rng import derive_seed

# grid knobs that a sweep may vary; T is exclusive with eta (B fixes the other)
AXIS_NAMES = ("eta", "B", "P", "T", "kappa", "chi", "Lambda", "m")
DEFAULT_SEEDS_PER_CELL = 5
DEFAULT_BUDGET = 20_000
THAT_THRESHOLD = 0.5

CELL_FIELDS = [
    "cell", "seed_index", "chi", "d", "P", "kappa", "eta", "B", "T",
    "momentum", "weight_decay", "seed", "steps", "t", "w1", "w_perp_norm",
    "w_norm", "lambda", "train_loss", "n_train", "test_error", "alignment",
    "t_star", "t_hat", "stop_reason", "diverged",
]
PHASE_FIELDS = ["eta", "B", "alignment", "test_error", "diverged"]


class BudgetError(RuntimeError):
    """The sweep grid exceeds the configured run budget."""


@dataclass(frozen=True)
class SweepSpec:
    """A cartesian sweep: base parameters plus named axes of values."""

    base: ModelParams
    axes: dict[str, tuple]
    seeds_per_cell: int = DEFAULT_SEEDS_PER_CELL
    outputs: str = "sweep_out"
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        for name, values in self.axes.items():
            if name not in AXIS_NAMES:
                raise ValueError(f"unknown axis {name!r}; allowed: {AXIS_NAMES}")
            if len(values) == 0:
                raise ValueError(f"axis {name!r} is empty")
            if name != "chi" and any(v <= 0 for v in values):
                raise ValueError(f"axis {name!r} must be positive")
        if "eta" in self.axes and "T" in self.axes:
            raise ValueError("axes eta and T are mutually exclusive")
        if self.seeds_per_cell < 1:
            raise ValueError("seeds_per_cell must be >= 1")

    @property
    def n_cells(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def cells(self):
        """Yield (index, {axis: value}) in deterministic grid order."""
        names = list(self.axes)
        for i, combo in enumerate(itertools.product(*(self.axes[n] for n in names))):
            yield i, dict(zip(names, combo))

    def cell_params(self, assignment: dict) -> ModelParams:
        """Resolve one grid assignment into concrete ModelParams."""
        base = self.base
        dist = base.dist
        if "chi" in assignment:
            dist = DataDistribution(chi=float(assignment["chi"]), dim=dist.dim)
        B = int(assignment.get("B", base.B))
        P = int(assignment.get("P", base.P))
        if "T" in assignment:
            eta = float(assignment["T"]) * B
        elif "eta" in assignment:
            eta = float(assignment["eta"])
        elif "T" not in self.axes and "eta" not in self.axes:
            eta = base.eta
        else:
            eta = base.eta
        return replace(
            base, dist=dist, P=P, B=min(B, P), eta=eta,
            kappa=float(assignment.get("kappa", base.kappa)),
            weight_decay=float(assignment.get("Lambda", base.weight_decay)),
            momentum=float(assignment.get("m", base.momentum)),
        )

    def to_json(self, path) -> None:
        payload = {
            "base": self.base.to_dict(),
            "axes": {k: list(v) for k, v in self.axes.items()},
            "seeds_per_cell": self.seeds_per_cell,
            "outputs": self.outputs,
            "budget": self.budget,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        with open(path) as fh:
            payload = json.load(fh)
        b = payload.get("base", {})
        base = ModelParams(
            dist=DataDistribution(chi=b.get("chi", 1.0), dim=b.get("d", 128)),
            P=b.get("P", 8192), kappa=b.get("kappa", 2.0**-7),
            eta=b.get("eta", 16.0), B=b.get("B", 8),
            momentum=b.get("momentum", 0.0),
            weight_decay=b.get("weight_decay", 0.0),
            max_steps=b.get("max_steps", 10_000_000),
            seed=b.get("seed", 0),
        )
        return cls(
            base=base,
            axes={k: tuple(v) for k, v in payload.get("axes", {}).items()},
            seeds_per_cell=payload.get("seeds_per_cell", DEFAULT_SEEDS_PER_CELL),
            outputs=payload.get("outputs", "sweep_out"),
            budget=payload.get("budget", DEFAULT_BUDGET),
        )


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares power law y = prefactor * x^exponent in log-log."""

    exponent: float
    prefactor: float
    stderr: float
    r_squared: float
    window: tuple[float, float]

    @property
    def flagged(self) -> bool:
        return self.r_squared < 0.9

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent, "prefactor": self.prefactor,
            "stderr": self.stderr, "r_squared": self.r_squared,
            "window": list(self.window), "flagged": self.flagged,
        }


@dataclass
class SweepResult:
    spec: SweepSpec
    records: list[dict] = field(default_factory=list)
    fits: dict = field(default_factory=dict)

    def cell_records(self, cell: int) -> list[dict]:
        return [r for r in self.records if r["cell"] == cell]

    def aggregate(self, keys=("w1", "w_perp_norm", "w_norm", "t_star")):
        """Per-cell seed averages: geometric for scales, arithmetic for errors.

        Diverged seeds are dropped; a cell where every seed diverged keeps
        only its ``diverged`` flag.
        """
        out = []
        for cell in sorted({r["cell"] for r in self.records}):
            recs = self.cell_records(cell)
            good = [r for r in recs if not r["diverged"]]
            row = {k: recs[0][k] for k in
                   ("cell", "chi", "d", "P", "kappa", "eta", "B", "T",
                    "momentum", "weight_decay")}
            row["diverged"] = len(good) == 0
            row["n_seeds"] = len(good)
            if good:
                for k in keys:
                    vals = [r[k] for r in good if r[k] is not None and r[k] > 0]
                    row[k] = geometric_mean(vals) if vals else None
                for k in ("test_error", "n_train", "alignment", "train_loss"):
                    row[k] = float(np.mean([r[k] for r in good]))
                t_hats = [r["t_hat"] for r in good if r["t_hat"] is not None]
                row["t_hat"] = geometric_mean(t_hats) if t_hats else None
            out.append(row)
        return out


def geometric_mean(values) -> float:
    return float(np.exp(np.mean(np.log(values))))


def fit_power_law(x, y) -> PowerLawFit:
    """Log-log least squares with exponent standard error and r^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise ValueError("power-law fit needs >= 4 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    (slope, intercept), cov = np.polyfit(lx, ly, 1, cov=True)
    resid = ly - (slope * lx + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(
        exponent=float(slope), prefactor=float(np.exp(intercept)),
        stderr=float(np.sqrt(cov[0, 0])), r_squared=r2,
        window=(float(x.min()), float(x.max())),
    )


def detect_empirical_that(record: RunRecord, threshold: float = THAT_THRESHOLD):
    """First recorded time where train and test errors separate.

    Separation means (test - train)/test exceeds ``threshold``; returns
    None if it never does (the P -> infinity surrogate).
    """
    test = record.test_error
    trainn = record.n_train
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(test > 0, (test - trainn) / test, 0.0)
    hits = np.nonzero((gap > threshold) & (record.steps > 0))[0]
    if hits.size == 0:
        return None
    return float(record.t[hits[0]])


def _run_cell(args):
    """Worker: one (cell, seed) training run, returned as a plain dict."""
    spec, cell_index, assignment, seed_index = args
    params = spec.cell_params(assignment)
    seed = derive_seed(spec.base.seed, "cell", cell_index, seed_index)
    params = replace(params, seed=seed)
    record = train(params)
    f = record.final()
    w_norm = math.hypot(f.w1, f.w_perp_norm) if np.isfinite(f.w_perp_norm) else math.inf
    return {
        "cell": cell_index, "seed_index": seed_index,
        **params.to_dict(),
        "steps": int(record.steps[-1]), "t": float(record.t[-1]),
        "w1": f.w1, "w_perp_norm": f.w_perp_norm, "w_norm": w_norm,
        "lambda": f.lam, "train_loss": f.train_loss, "n_train": f.n_train,
        "test_error": f.test_error, "alignment": f.alignment,
        "t_star": record.t_star,
        "t_hat": detect_empirical_that(record),
        "stop_reason": record.stop_reason,
        "diverged": record.diverged,
    }


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Execute every (cell, seed) run, resuming from persisted results.

    Each result lands in <outputs>/runs/ as JSON keyed by cell and seed
    index, so a killed sweep restarts where it left off.  The compiled
    cells.csv (and phase.csv when the grid spans eta and B) are written
    in grid order, independent of scheduling.
    """
    total = spec.n_cells * spec.seeds_per_cell
    if total > spec.budget:
        raise BudgetError(f"{total} runs exceed budget {spec.budget}")

    out_dir = Path(spec.outputs)
    runs_dir = out_dir / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for cell_index, assignment in spec.cells():
        for seed_index in range(spec.seeds_per_cell):
            path = runs_dir / f"cell{cell_index:05d}_seed{seed_index}.json"
            jobs.append((cell_index, assignment, seed_index, path))

    pending = [(spec, c, a, s) for c, a, s, p in jobs if not p.exists()]
    if pending:
        if workers is None:
            workers = default_workers()
        if workers > 1 and len(pending) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_cell, pending, chunksize=1))
        else:
            results = [_run_cell(job) for job in pending]
        for job, rec in zip(pending, results):
            path = runs_dir / f"cell{job[1]:05d}_seed{job[3]}.json"
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w") as fh:
                json.dump(rec, fh, indent=2)
            os.replace(tmp, path)

    records = []
    for cell_index, assignment, seed_index, path in jobs:
        with open(path) as fh:
            records.append(json.load(fh))

    result = SweepResult(spec=spec, records=records)
    write_cells_csv(result, out_dir / "cells.csv")
    if "eta" in spec.axes and "B" in spec.axes:
        write_phase_csv(result, out_dir / "phase.csv")
    return result


def default_workers() -> int:
    env = os.environ.get("SGDREG_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, (os.cpu_count() or 1) - 1)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def write_cells_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CELL_FIELDS)
        for r in result.records:
            writer.writerow([_fmt(r.get(k)) for k in CELL_FIELDS])


def write_phase_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PHASE_FIELDS)
        for row in result.aggregate():
            writer.writerow([
                _fmt(row["eta"]), _fmt(row["B"]),
                _fmt(row.get("alignment")), _fmt(row.get("test_error")),
                _fmt(row["diverged"]),
            ])


def detect_Bstar(result: SweepResult, plateau_fraction: float = 0.25):
    """Critical batch size per P, plus a power-law fit of B*(P).

    At fixed eta, w1*B/eta is constant on the noise-dominated small-B
    branch and w1/eta is constant on the first-step-dominated large-B
    branch; B* is the intersection of the two fitted plateaus.  Each
    plateau is the geometric mean over the smallest (largest)
    ``plateau_fraction`` of the B grid.
    """
    rows = [r for r in result.aggregate() if not r["diverged"] and r["w1"]]
    by_P: dict[int, list] = {}
    for r in rows:
        by_P.setdefault(r["P"], []).append(r)
    if len(by_P) < 3:
        raise ValueError("detect_Bstar needs >= 3 values of P")

    b_stars = {}
    for P, cells in sorted(by_P.items()):
        cells.sort(key=lambda r: r["B"])
        if len(cells) < 6:
            raise ValueError(f"detect_Bstar needs >= 6 batch sizes per P (P={P})")
        k = max(2, int(round(len(cells) * plateau_fraction)))
        small = cells[:k]
        large = cells[-k:]
        c_small = geometric_mean([r["w1"] * r["B"] / r["eta"] for r in small])
        c_large = geometric_mean([r["w1"] / r["eta"] for r in large])
        b_star = c_small / c_large
        b_vals = [r["B"] for r in cells]
        if not (min(b_vals) <= b_star <= max(b_vals)):
            raise ValueError(f"B* = {b_star:.3g} outside swept range for P={P}")
        b_stars[P] = b_star

    fit = fit_power_law(list(b_stars), list(b_stars.values()))
    return b_stars, fit


def fit_weight_scaling(result: SweepResult, kappa_margin: float = 8.0,
                       bstar_margin: float = 4.0):
    """Joint exponents of end-of-training ||w|| = A T^{a_T} P^{a_P}.

    Restricted to noise-dominated cells: T >= kappa_margin * kappa and
    B <= B*(P)/bstar_margin with the theoretical B* scale.  Returns
    (fit_T, fit_P) sharing the joint least-squares covariance.
    """
    rows = [
        r for r in result.aggregate()
        if not r["diverged"] and r["w_norm"]
        and r["T"] >= kappa_margin * r["kappa"]
        and r["B"] <= ode.predict_Bstar(r["chi"], r["P"]) / bstar_margin
    ]
    if len(rows) < 4:
        raise ValueError("too few noise-dominated cells for the joint fit")
    logT = np.log([r["T"] for r in rows])
    logP = np.log([r["P"] for r in rows])
    logw = np.log([r["w_norm"] for r in rows])
    X = np.column_stack([logT, logP, np.ones_like(logT)])
    coef, res, *_ = np.linalg.lstsq(X, logw, rcond=None)
    resid = logw - X @ coef
    dof = max(len(rows) - 3, 1)
    cov = float(resid @ resid) / dof * np.linalg.inv(X.T @ X)
    ss_tot = float(np.sum((logw - logw.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    a = math.exp(coef[2])
    fit_T = PowerLawFit(float(coef[0]), a, float(np.sqrt(cov[0, 0])), r2,
                        (float(np.exp(logT.min())), float(np.exp(logT.max()))))
    fit_P = PowerLawFit(float(coef[1]), a, float(np.sqrt(cov[1, 1])), r2,
                        (float(np.exp(logP.min())), float(np.exp(logP.max()))))
    return fit_T, fit_P


def detect_gd_boundary(result: SweepResult, factor: float = 2.0):
    """Learning-rate boundary of the gradient-descent regime per batch size.

    The reference alignment m_GD is the average over the smallest-eta
    column; the boundary eta_c(B) is where alignment crosses
    factor * m_GD, by log-linear interpolation in eta.  Cells beyond the
    divergence line are ignored.  Returns a list of (B, eta_c).
    """
    rows = [r for r in result.aggregate()
            if not r["diverged"] and np.isfinite(r["alignment"])]
    if not rows:
        return []
    etas = sorted({r["eta"] for r in rows})
    eta_min = etas[0]
    ref = [r["alignment"] for r in rows if r["eta"] == eta_min]
    m_gd = float(np.mean(ref))
    target = factor * m_gd

    curve = []
    for B in sorted({r["B"] for r in rows}):
        col = sorted((r["eta"], r["alignment"]) for r in rows if r["B"] == B)
        for (e0, a0), (e1, a1) in zip(col, col[1:]):
            if (a0 - target) * (a1 - target) <= 0 and a0 != a1:
                f = (target - a0) / (a1 - a0)
                eta_c = math.exp(math.log(e0) + f * (math.log(e1) - math.log(e0)))
                curve.append((B, eta_c))
                break
    return curve


def momentum_equivalence_study(base: ModelParams, m_values=(0.9,),
                               outputs="mom_out", seeds_per_cell=3,
                               workers=None):
    """Momentum runs vs plain runs at the rescaled temperature T/(1-m).

    For each m the plain comparison run uses eta' = eta/(1-m) at the same
    B, i.e. the effective-temperature mapping.  Returns the sweep result
    and per-m ratios of final ||w_perp||.
    """
    axes = {"m": tuple([0.0] + list(m_values)),
            "eta": tuple(sorted({base.eta} | {base.eta / (1 - m) for m in m_values}))}
    spec = SweepSpec(base=base, axes=axes, seeds_per_cell=seeds_per_cell,
                     outputs=outputs)
    result = run_sweep(spec, workers=workers)
    agg = {(row["momentum"], row["eta"]): row for row in result.aggregate()}
    ratios = {}
    for m in m_values:
        with_m = agg[(m, base.eta)]
        plain = agg[(0.0, base.eta / (1 - m))]
        ratios[m] = with_m["w_perp_norm"] / plain["w_perp_norm"]
    result.fits["momentum_wp_ratio"] = ratios
    return result, ratios


def weight_decay_study(base: ModelParams, Lambda_values, outputs="wd_out",
                       seeds_per_cell=3, workers=None):
    """Stationary state vs weight decay, with the predicted Lambda*.

    Runs each Lambda to max_steps (decay never fits the data exactly) and
    fits the w1 and test-error power laws on the Lambda >> Lambda* branch.
    """
    spec = SweepSpec(base=base, axes={"Lambda": tuple(Lambda_values)},
                     seeds_per_cell=seeds_per_cell, outputs=outputs)
    result = run_sweep(spec, workers=workers)
    T = base.temperature
    lam_star = ode.lambda_star(base.dist.chi, T, base.dist.dim, base.P)
    rows = [r for r in result.aggregate() if not r["diverged"]]
    branch = [r for r in rows if r["weight_decay"] > 4.0 * lam_star]
    fits = {"Lambda_star": lam_star}
    if len(branch) >= 4:
        fits["w1_vs_Lambda"] = fit_power_law(
            [r["weight_decay"] for r in branch], [r["w1"] for r in branch]
        ).to_dict()
        errs = [r for r in branch if r["test_error"] > 0]
        if len(errs) >= 4:
            fits["test_error_vs_Lambda"] = fit_power_law(
                [r["weight_decay"] for r in errs],
                [r["test_error"] for r in errs],
            ).to_dict()
    result.fits.update(fits)
    return result, fits


def save_fits(result: SweepResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.fits, fh, indent=2, default=str)
