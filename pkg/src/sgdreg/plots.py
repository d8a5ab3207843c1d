"""Figure rendering from the delimited outputs.

Every function takes a CSV produced by the CLI and writes a PNG next to
it.  The CSVs remain the data contract; these figures are a convenience
layer for eyeballing runs without a notebook.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    cols: dict[str, np.ndarray] = {}
    for name in reader.fieldnames:
        vals = [row[name] for row in rows]
        cols[name] = np.array([float(v) if v != "" else np.nan for v in vals])
    return cols


def plot_run(record_csv, out_png=None) -> Path:
    """Weight components and error curves of one training run vs time."""
    c = _read_csv(record_csv)
    out = Path(out_png) if out_png else Path(record_csv).with_suffix(".png")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    t = np.maximum(c["t"], np.min(c["t"][c["t"] > 0], initial=1.0))
    ax1.loglog(t, c["w1"], label=r"$w_1$")
    ax1.loglog(t, c["w_perp_norm"], label=r"$\|w_\perp\|$")
    ax1.set_xlabel("t")
    ax1.legend()
    mask = c["n_train"] > 0
    ax2.loglog(t[mask], c["n_train"][mask], label="train n")
    mask = c["test_error"] > 0
    ax2.loglog(t[mask], c["test_error"][mask], label="test error")
    ax2.set_xlabel("t")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_ode(ode_csv, out_png=None) -> Path:
    """Reduced-dynamics trajectory: weights and unfitted fraction vs time."""
    c = _read_csv(ode_csv)
    out = Path(out_png) if out_png else Path(ode_csv).with_suffix(".png")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.loglog(c["t"], c["w1"], label=r"$w_1$")
    ax1.loglog(c["t"], c["wp"], label=r"$\|w_\perp\|$")
    ax1.set_xlabel("t")
    ax1.legend()
    ax2.loglog(c["t"], c["n_theory"])
    ax2.set_xlabel("t")
    ax2.set_ylabel("n")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_phase(phase_csv, out_png=None) -> Path:
    """Alignment heatmap over the (eta, B) grid with diverged cells marked."""
    c = _read_csv(phase_csv)
    out = Path(out_png) if out_png else Path(phase_csv).with_suffix(".png")
    etas = np.unique(c["eta"])
    bs = np.unique(c["B"])
    grid = np.full((etas.size, bs.size), np.nan)
    dead = []
    for eta, b, a, div in zip(c["eta"], c["B"], c["alignment"], c["diverged"]):
        i = np.searchsorted(etas, eta)
        j = np.searchsorted(bs, b)
        if div:
            dead.append((b, eta))
        else:
            grid[i, j] = a
    fig, ax = plt.subplots(figsize=(5, 4))
    mesh = ax.pcolormesh(bs, etas, grid, shading="nearest", cmap="viridis")
    if dead:
        dx, dy = zip(*dead)
        ax.plot(dx, dy, "k.", ms=8)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("B")
    ax.set_ylabel(r"$\eta$")
    fig.colorbar(mesh, ax=ax, label="alignment")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_theory(theory_csv, out_png=None) -> Path:
    """Population averages against lambda (log-log where positive)."""
    c = _read_csv(theory_csv)
    out = Path(out_png) if out_png else Path(theory_csv).with_suffix(".png")
    fig, ax = plt.subplots(figsize=(5, 4))
    lam = c["lambda"]
    for name in ("g1", "n", "sigma11", "sigma22"):
        vals = c[name]
        mask = vals > 0
        if mask.sum() > 1:
            ax.loglog(lam[mask], vals[mask], label=name)
    mask = c["g_perp"] < 0
    if mask.sum() > 1:
        ax.loglog(lam[mask], -c["g_perp"][mask], label="-g_perp")
    ax.set_xlabel(r"$\lambda$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
