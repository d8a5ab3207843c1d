"""Command-line interface: sample, train, theory, ode, sweep, fit.

Every parameter can come from a flag or from a JSON config file
(``--config``), flags winning; every run writes a ``manifest.json`` with
the fully resolved configuration so any output can be re-derived exactly.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 budget or I/O
failure.  Errors are one machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__, experiments, ode, theory
from .distribution import DataDistribution, generate_dataset
from .experiments import BudgetError, SweepSpec
from .perceptron import FLOAT_FMT, ModelParams, train
from .theory import QuadratureError

DEFAULTS = {
    "chi": 1.0, "d": 128, "p": 8192, "kappa": 2.0**-7,
    "eta": 16.0, "batch": 8, "momentum": 0.0, "weight_decay": 0.0,
    "seed": 0, "max_steps": 10_000_000,
}

THEORY_HEADER = "lambda,r,g1,g_perp,n,sigma11,sigma12,sigma22"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_model_args(p: _Parser) -> None:
    p.add_argument("--chi", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--temperature", type=float,
                   help="T = eta/B; sets eta from the batch size")
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags win")
    p.add_argument("--out", type=Path)
    p.add_argument("--plot", action="store_true",
                   help="also render PNG figures next to the CSV outputs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="sgdreg", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"sgdreg {__version__}")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("sample", help="generate and dump a dataset")
    _add_model_args(p)
    _add_common(p)

    p = sub.add_parser("train", help="one SGD training run")
    _add_model_args(p)
    _add_common(p)

    p = sub.add_parser("theory", help="population averages at (lambda, r)")
    p.add_argument("--chi", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--lambda-grid", type=str, metavar="MIN,MAX,NUM",
                   help="geometric lambda grid instead of a single point")
    _add_common(p)

    p = sub.add_parser("ode", help="integrate the reduced dynamics")
    _add_model_args(p)
    p.add_argument("--t-end", type=float, default=1e6)
    p.add_argument("--n-points", type=int, default=200)
    _add_common(p)

    p = sub.add_parser("sweep", help="run a parameter sweep from a spec file")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--workers", type=int)
    _add_common(p)

    p = sub.add_parser("fit", help="fit exponents from a completed sweep")
    p.add_argument("--spec", type=Path, required=True)
    p.add_argument("--kind", choices=("bstar", "weight-scaling", "gd-boundary"),
                   required=True)
    p.add_argument("--workers", type=int)
    _add_common(p)

    return parser


def _load_config(args) -> dict:
    path = getattr(args, "config", None)
    if path is None:
        return {}
    try:
        with open(path) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise UsageError(f"bad config {path}: expected a JSON object")
    return config


def _resolve(args, config: dict, key: str):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return DEFAULTS.get(key)


def resolve_params(args, config: dict) -> ModelParams:
    batch = int(_resolve(args, config, "batch"))
    temperature = getattr(args, "temperature", None)
    if temperature is None:
        temperature = config.get("temperature")
    eta_given = getattr(args, "eta", None) is not None or "eta" in config
    if temperature is not None and eta_given:
        raise UsageError("--temperature and --eta are mutually exclusive")
    eta = temperature * batch if temperature is not None \
        else float(_resolve(args, config, "eta"))
    try:
        return ModelParams(
            dist=DataDistribution(chi=float(_resolve(args, config, "chi")),
                                  dim=int(_resolve(args, config, "d"))),
            P=int(_resolve(args, config, "p")),
            kappa=float(_resolve(args, config, "kappa")),
            eta=eta, B=batch,
            momentum=float(_resolve(args, config, "momentum")),
            weight_decay=float(_resolve(args, config, "weight_decay")),
            max_steps=int(_resolve(args, config, "max_steps")),
            seed=int(_resolve(args, config, "seed")),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write_manifest(out_dir: Path, subcommand: str, resolved: dict) -> None:
    manifest = {"tool": "sgdreg", "version": __version__,
                "subcommand": subcommand, "config": resolved}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _out_dir(args, default: str) -> Path:
    out = args.out if args.out is not None else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_sample(args) -> int:
    config = _load_config(args)
    params = resolve_params(args, config)
    out = _out_dir(args, "sample_out")
    ds = generate_dataset(params.dist, params.P, params.seed)
    ds.dump(out / "dataset.bin")
    _write_manifest(out, "sample", {
        "chi": params.dist.chi, "d": params.dist.dim,
        "p": params.P, "seed": params.seed,
    })
    print(f"wrote {out / 'dataset.bin'} ({params.P} points)")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    params = resolve_params(args, config)
    out = _out_dir(args, "train_out")
    record = train(params)
    record.save(out / "record.csv", out / "record.json")
    _write_manifest(out, "train", params.to_dict())
    if args.plot:
        from . import plots

        plots.plot_run(out / "record.csv")
    f = record.final()
    print(f"stop={record.stop_reason} steps={record.steps[-1]} "
          f"w1={f.w1:.6g} w_perp={f.w_perp_norm:.6g} "
          f"test_error={f.test_error:.6g}")
    return 0


def _theory_row(dist: DataDistribution, lam: float, r: float) -> str:
    ev = theory.evaluate(dist, theory.ReducedCoords(lam=lam, r=r))
    vals = (lam, r, ev.g1, ev.g_perp, ev.n,
            ev.sigma11_tilde, ev.sigma12_tilde, ev.sigma22_tilde)
    return ",".join(FLOAT_FMT % v for v in vals)


def cmd_theory(args) -> int:
    config = _load_config(args)
    chi = float(_resolve(args, config, "chi"))
    r = args.r if args.r is not None else config.get("r", 0.0)
    dist = DataDistribution(chi=chi, dim=int(config.get("d", DEFAULTS["d"])))
    grid_arg = args.lambda_grid or config.get("lambda_grid")
    if grid_arg:
        try:
            lo, hi, num = grid_arg.split(",")
            lams = [float(lo) * (float(hi) / float(lo)) ** (i / (int(num) - 1))
                    for i in range(int(num))]
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"bad --lambda-grid {grid_arg!r}") from exc
    else:
        lam = args.lam if args.lam is not None else config.get("lambda")
        if lam is None:
            raise UsageError("theory needs --lambda or --lambda-grid")
        lams = [float(lam)]

    lines = [THEORY_HEADER] + [_theory_row(dist, lam, float(r)) for lam in lams]
    print("\n".join(lines))
    if args.out is not None:
        out = _out_dir(args, "theory_out")
        (out / "theory.csv").write_text("\n".join(lines) + "\n")
        _write_manifest(out, "theory", {
            "chi": chi, "d": dist.dim, "r": float(r),
            "lambda_grid": grid_arg, "lambda": None if grid_arg else lams[0],
        })
        if args.plot:
            from . import plots

            plots.plot_theory(out / "theory.csv")
    return 0


def cmd_ode(args) -> int:
    config = _load_config(args)
    params = resolve_params(args, config)
    out = _out_dir(args, "ode_out")
    traj = ode.integrate(params, t_end=args.t_end, n_points=args.n_points)
    traj.to_csv(out / "ode.csv")
    pred = ode.predict_crossover(
        params.dist.chi, params.temperature, params.dist.dim, params.P,
        Lambda=params.weight_decay,
    )
    ode.save_prediction(pred, out / "prediction.json")
    _write_manifest(out, "ode", {
        **params.to_dict(), "t_end": args.t_end, "n_points": args.n_points,
    })
    if args.plot:
        from . import plots

        plots.plot_ode(out / "ode.csv")
    print(f"wrote {out / 'ode.csv'}; wp_steady={pred.wp_steady:.6g} "
          f"t_hat={pred.t_hat:.6g}")
    return 0


def _load_spec(args) -> SweepSpec:
    try:
        spec = SweepSpec.from_json(args.spec)
    except FileNotFoundError as exc:
        raise UsageError(f"spec not found: {args.spec}") from exc
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise UsageError(f"bad spec {args.spec}: {exc}") from exc
    if args.out is not None:
        spec = SweepSpec(base=spec.base, axes=spec.axes,
                         seeds_per_cell=spec.seeds_per_cell,
                         outputs=str(args.out), budget=spec.budget)
    return spec


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    result = experiments.run_sweep(spec, workers=args.workers)
    out = Path(spec.outputs)
    _write_manifest(out, "sweep", {
        "spec": json.loads(Path(args.spec).read_text()),
        "workers_are_cosmetic": True,
    })
    if args.plot and (out / "phase.csv").exists():
        from . import plots

        plots.plot_phase(out / "phase.csv")
    n_div = sum(r["diverged"] for r in result.records)
    print(f"{len(result.records)} runs -> {out / 'cells.csv'} "
          f"({n_div} diverged)")
    return 0


def cmd_fit(args) -> int:
    spec = _load_spec(args)
    result = experiments.run_sweep(spec, workers=args.workers)
    out = Path(spec.outputs)
    if args.kind == "bstar":
        b_stars, fit = experiments.detect_Bstar(result)
        payload = {"b_star_per_P": {str(k): v for k, v in b_stars.items()},
                   "fit": fit.to_dict()}
        print(f"B* exponent = {fit.exponent:.4f} +- {fit.stderr:.4f}")
    elif args.kind == "weight-scaling":
        fit_T, fit_P = experiments.fit_weight_scaling(result)
        payload = {"a_T": fit_T.to_dict(), "a_P": fit_P.to_dict()}
        print(f"a_T = {fit_T.exponent:.4f} +- {fit_T.stderr:.4f}, "
              f"a_P = {fit_P.exponent:.4f} +- {fit_P.stderr:.4f}")
    else:
        curve = experiments.detect_gd_boundary(result)
        payload = {"eta_c": [{"B": b, "eta": e} for b, e in curve]}
        print(f"boundary over {len(curve)} batch sizes")
    with open(out / "fits.json", "w") as fh:
        json.dump(payload, fh, indent=2)
    return 0


_HANDLERS = {
    "sample": cmd_sample, "train": cmd_train, "theory": cmd_theory,
    "ode": cmd_ode, "sweep": cmd_sweep, "fit": cmd_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError("a subcommand is required")
        return _HANDLERS[args.subcommand](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except (QuadratureError, ode.IntegrationError, ArithmeticError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 2
    except (BudgetError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
