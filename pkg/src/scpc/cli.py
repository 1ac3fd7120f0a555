"""Command-line surface: estimate | calibrate | certify | ftest | simulate.

Exit codes: 0 success, 2 input error, 3 numeric/solver error.  Every run
echoes its fully resolved configuration into the JSON output (schema
``scpc/1``) so results can be reproduced from the output alone.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import pandas as pd

from . import __version__
from .covariance import Benchmark, calibrate_c0, resolve_family
from .errors import InputError, ScpcError
from .estimator import (
    DEFAULT_SEED,
    RegressionInput,
    ScpcOptions,
    regression_scores,
    scpc_interval,
)
from .ftest import hotelling_test
from .geometry import DesignSpec, SpatialDesign
from .montecarlo import SimulationConfig, heteroskedasticity_sweep, run_experiment
from .robustness import matern_robust_range

SCHEMA = "scpc/1"


def _add_data_flags(p: argparse.ArgumentParser, with_y: bool = True) -> None:
    p.add_argument("--data", required=True, help="CSV file (header row, comma separated)")
    p.add_argument("--coord-cols", required=True, help="comma-separated coordinate columns")
    if with_y:
        p.add_argument("--y-col", required=True, help="outcome column")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho0", type=float, default=0.02, help="target average pairwise correlation")
    p.add_argument("--alpha", type=float, default=0.05, help="test level")
    p.add_argument("--family", default="exponential", help="benchmark kernel family")
    p.add_argument("--seed", default=str(DEFAULT_SEED), help="integer seed, or 'random'")
    p.add_argument("--out", default=None, help="write JSON here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scpc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"scpc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="confidence interval for a mean or regression slope")
    _add_data_flags(est)
    _add_common_flags(est)
    est.add_argument("--x-col", default=None, help="regressor of interest (slope inference)")
    est.add_argument("--controls", default=None, help="comma-separated control columns")
    est.add_argument("--no-intercept", action="store_true", help="omit the intercept control")
    est.add_argument("--q", type=int, default=None, help="fix the component count")
    est.add_argument("--q-max", type=int, default=40)
    est.add_argument("--grid-size", type=int, default=50)
    est.add_argument("--nystrom", choices=("auto", "on", "off"), default="auto")
    est.add_argument("--nystrom-subset-size", type=int, default=None)
    est.add_argument("--nystrom-subsets", type=int, default=3)

    cal = sub.add_parser("calibrate", help="persistence parameter for a target correlation")
    _add_data_flags(cal, with_y=False)
    _add_common_flags(cal)

    cer = sub.add_parser("certify", help="Matern robustness certificate for a design")
    _add_data_flags(cer, with_y=False)
    _add_common_flags(cer)
    cer.add_argument("--families", default="0.5,1.5,2.5,inf", help="Matern smoothness values")
    cer.add_argument("--q-max", type=int, default=40)
    cer.add_argument("--grid-points", type=int, default=60)

    fte = sub.add_parser("ftest", help="joint test of several means")
    fte.add_argument("--data", required=True)
    fte.add_argument("--coord-cols", required=True)
    fte.add_argument("--y-cols", required=True, help="comma-separated outcome columns")
    fte.add_argument("--mu0", required=True, help="comma-separated hypothesized means")
    _add_common_flags(fte)
    fte.add_argument("--q-max", type=int, default=20)
    fte.add_argument("--mc-reps", type=int, default=100_000)

    sim = sub.add_parser("simulate", help="run a size/length experiment from a JSON config")
    sim.add_argument("--config", required=True, help="JSON experiment description")
    sim.add_argument("--out", default=None)
    sim.add_argument("--csv-out", default=None, help="optional per-profile CSV for sweeps")
    return parser


def _parse_seed(raw: str) -> int:
    if raw == "random":
        return int(np.random.SeedSequence().generate_state(1)[0])
    try:
        return int(raw)
    except ValueError as exc:
        raise InputError(f"--seed must be an integer or 'random', got {raw!r}") from exc


def _load_table(path: str, columns: list[str]) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise InputError(f"data file not found: {path}") from exc
    except Exception as exc:
        raise InputError(f"could not parse CSV {path}: {exc}") from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise InputError(f"missing columns in {path}: {', '.join(missing)}")
    sub = frame[columns]
    if sub.isna().any().any():
        raise InputError("data contains missing values in the requested columns")
    return sub


def _design_from_args(args) -> SpatialDesign:
    coord_cols = [c.strip() for c in args.coord_cols.split(",") if c.strip()]
    if not coord_cols:
        raise InputError("--coord-cols must name at least one column")
    table = _load_table(args.data, coord_cols)
    return SpatialDesign(table.to_numpy(dtype=float))


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, allow_nan=False, default=_json_default)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _sanitize(obj):
    """Replace non-finite floats so the payload stays valid strict JSON."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


def _cmd_estimate(args) -> dict:
    design = _design_from_args(args)
    seed = _parse_seed(args.seed)
    options = ScpcOptions(
        family=resolve_family(args.family),
        q=args.q,
        q_max=args.q_max,
        grid_size=args.grid_size,
        nystrom=args.nystrom,
        nystrom_subset_size=args.nystrom_subset_size,
        nystrom_subsets=args.nystrom_subsets,
        seed=seed,
    )
    y_table = _load_table(args.data, [args.y_col])
    y = y_table[args.y_col].to_numpy(dtype=float)
    regression_block = None
    if args.controls and args.x_col is None:
        raise InputError("--controls requires --x-col")
    if args.x_col is not None:
        cols = [args.x_col] + ([c.strip() for c in args.controls.split(",")] if args.controls else [])
        xz = _load_table(args.data, cols)
        x = xz[args.x_col].to_numpy(dtype=float)
        controls = xz[cols[1:]].to_numpy(dtype=float) if len(cols) > 1 else None
        z = controls
        if not args.no_intercept:
            ones = np.ones((design.n, 1))
            z = ones if controls is None else np.column_stack([ones, controls])
        scores = regression_scores(RegressionInput(w=y, x=x, z=z), design)
        regression_block = {
            "beta_hat": scores.beta_hat,
            "x_tilde_var": scores.x_tilde_var,
            "scores": scores.scores.tolist(),
        }
        y = scores.scores
    result = scpc_interval(y, design, rho0=args.rho0, alpha=args.alpha, options=options)
    payload = {
        "schema": SCHEMA,
        "command": "estimate",
        "config": {
            "data": args.data,
            "y_col": args.y_col,
            "coord_cols": args.coord_cols,
            "x_col": args.x_col,
            "controls": args.controls,
            "intercept": not args.no_intercept,
            "rho0": args.rho0,
            "alpha": args.alpha,
            "family": options.family,
            "q": args.q,
            "q_max": args.q_max,
            "grid_size": args.grid_size,
            "nystrom": args.nystrom,
            "nystrom_subset_size": args.nystrom_subset_size,
            "nystrom_subsets": args.nystrom_subsets,
            "seed": seed,
        },
        "result": result.to_dict(),
    }
    payload["result"]["se"] = result.sigma_hat / np.sqrt(design.n)
    if regression_block is not None:
        payload["regression"] = regression_block
    return payload


def _cmd_calibrate(args) -> dict:
    design = _design_from_args(args)
    family = resolve_family(args.family)
    c0 = calibrate_c0(design, family, args.rho0)
    bench = Benchmark(design, family)
    grid = np.geomspace(c0 / 100.0, c0 * 100.0, 41)
    return {
        "schema": SCHEMA,
        "command": "calibrate",
        "config": {
            "data": args.data,
            "coord_cols": args.coord_cols,
            "rho0": args.rho0,
            "family": family,
            "seed": _parse_seed(args.seed),
        },
        "result": {
            "c0": c0,
            "rho_curve": [{"c": float(c), "rho_bar": bench.rho_bar(float(c))} for c in grid],
        },
    }


def _cmd_certify(args) -> dict:
    design = _design_from_args(args)
    seed = _parse_seed(args.seed)
    family = resolve_family(args.family)
    c0 = calibrate_c0(design, family, args.rho0)
    from .estimator import select_q

    sel = select_q(design, family, c0, args.alpha, min(args.q_max, design.n - 1))
    families = tuple(f.strip() for f in args.families.split(","))
    report = matern_robust_range(
        design, c0, sel.q, sel.cv, nu_set=families, grid_points=args.grid_points
    )
    print(
        f"certified average-correlation range: [{report.rho_lower:.5f}, {report.rho_upper:.5f}] "
        f"(benchmark rho = {report.rho0:.5f}, q = {sel.q}, cv = {sel.cv:.4f})",
        file=sys.stderr,
    )
    print(f"{'family':<12} {'c':>12} {'rho_bar':>10} {'min partial sum':>16} feasible", file=sys.stderr)
    for m in report.records:
        print(
            f"{m.theta['family']:<12} {m.theta['c']:>12.4f} {m.theta['rho_bar']:>10.5f} "
            f"{m.partial_sums.min():>16.3e} {'yes' if m.feasible else 'NO'}",
            file=sys.stderr,
        )
    return {
        "schema": SCHEMA,
        "command": "certify",
        "config": {
            "data": args.data,
            "coord_cols": args.coord_cols,
            "rho0": args.rho0,
            "alpha": args.alpha,
            "family": family,
            "families": list(families),
            "q_max": args.q_max,
            "grid_points": args.grid_points,
            "seed": seed,
        },
        "result": {"q": sel.q, "cv": sel.cv, "c0": c0, **report.to_dict()},
    }


def _cmd_ftest(args) -> dict:
    coord_cols = [c.strip() for c in args.coord_cols.split(",") if c.strip()]
    y_cols = [c.strip() for c in args.y_cols.split(",") if c.strip()]
    table = _load_table(args.data, coord_cols + y_cols)
    design = SpatialDesign(table[coord_cols].to_numpy(dtype=float))
    y = table[y_cols].to_numpy(dtype=float)
    mu0 = np.array([float(v) for v in args.mu0.split(",")])
    seed = _parse_seed(args.seed)
    result = hotelling_test(
        y, mu0, design, rho0=args.rho0, alpha=args.alpha,
        q_max=args.q_max, mc_reps=args.mc_reps, seed=seed,
    )
    return {
        "schema": SCHEMA,
        "command": "ftest",
        "config": {
            "data": args.data,
            "coord_cols": args.coord_cols,
            "y_cols": args.y_cols,
            "mu0": args.mu0,
            "rho0": args.rho0,
            "alpha": args.alpha,
            "q_max": args.q_max,
            "mc_reps": args.mc_reps,
            "seed": seed,
        },
        "result": result.to_dict(),
    }


def _cmd_simulate(args) -> dict:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {args.config}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc

    design_raw = raw.get("design")
    if design_raw is None:
        raise InputError("config needs a 'design' object")
    spec = DesignSpec(
        kind=design_raw.get("kind", "uniform-rectangle"),
        n=int(design_raw.get("n", 200)),
        bounds=design_raw.get("bounds"),
        vertices=design_raw.get("vertices"),
        seed=int(design_raw.get("seed", 0)),
    )
    truth = raw.get("truth", {})
    scenario = raw.get("scenario", {})
    config = SimulationConfig(
        design=spec,
        method=raw.get("method", "scpc"),
        method_params=raw.get("method_params", {}),
        truth_family=truth.get("family", "exponential"),
        truth_c=truth.get("c"),
        truth_rho=truth.get("rho"),
        alpha=float(raw.get("alpha", 0.05)),
        replications=int(raw.get("replications", 1000)),
        seed=int(raw.get("seed", DEFAULT_SEED)),
        mu_true=float(raw.get("mu_true", 0.0)),
        location_error=scenario.get("location_error"),
    )
    resolved = {
        "design": {"kind": spec.kind, "n": spec.n, "bounds": spec.bounds, "vertices": spec.vertices, "seed": spec.seed},
        "method": config.method,
        "method_params": config.method_params,
        "truth": {"family": config.truth_family, "c": config.truth_c, "rho": config.truth_rho},
        "alpha": config.alpha,
        "replications": config.replications,
        "seed": config.seed,
        "mu_true": config.mu_true,
        "scenario": scenario,
    }
    if scenario.get("heteroskedasticity") == "log-linear-sweep":
        sweep = heteroskedasticity_sweep(config, ratio=float(scenario.get("ratio", 3.0)))
        if args.csv_out:
            rows = [
                {"profile": name, **rep}
                for name, rep in sweep["profiles"].items()
            ]
            pd.DataFrame(rows).to_csv(args.csv_out, index=False)
        return {"schema": SCHEMA, "command": "simulate", "config": resolved, "result": sweep}
    if scenario.get("heteroskedasticity") is not None:
        raise InputError("only the 'log-linear-sweep' heteroskedasticity scenario is file-configurable")
    report = run_experiment(config)
    return {"schema": SCHEMA, "command": "simulate", "config": resolved, "result": report.to_dict()}


_COMMANDS = {
    "estimate": _cmd_estimate,
    "calibrate": _cmd_calibrate,
    "certify": _cmd_certify,
    "ftest": _cmd_ftest,
    "simulate": _cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, which matches the input-error code
        return int(exc.code or 0)
    try:
        payload = _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"scpc: input error: {exc}", file=sys.stderr)
        return 2
    except ScpcError as exc:
        print(f"scpc: numeric error: {exc}", file=sys.stderr)
        return 3
    _emit(_sanitize(payload), getattr(args, "out", None))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
