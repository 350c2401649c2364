#!/usr/bin/env python3
"""
Command-line entry point

    python cli.py fit --input data.csv --family poisson --sigma-w 0.141
    python cli.py simulate --case 1 --family poisson --n-list 128,256 --reps 50
    python cli.py sensitivity --input wages.csv --family bernoulli --sigma-w2-list 0,1,4,9,16

Exit codes: 0 success, 2 bad input or configuration, 3 fit failure.
"""

import argparse
import logging
import os
import sys
import warnings
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from defaults import (
    BASIS_DIM,
    BASIS_KIND,
    CURVE_COLUMNS,
    DEFAULT_ESTIMATORS,
    DESK_N_LIST,
    DESK_REPS,
    GRID_POINTS,
    MC_SAMPLES,
    MC_SAMPLES_DESK,
    PAPER_N_LIST,
    PAPER_REPS,
    SENSITIVITY_SIGMA_W2,
)
from osmee.errors import ConfigError, InputError, OsmeeError, OsmeeWarning
from osmee.estimator import OsmeeConfig, run_osmee
from osmee.family import FAMILIES
from osmee.predictor_model import SAMPLERS, ErrorModel
from osmee.settings import get_default_seed, get_mc_samples
from osmee.simlab import XDISTS, get_case, run_study, sensitivity_sweep
from osmee.working_fit import METHODS

logger = logging.getLogger("osmee.cli")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FIT = 3


# ---------------------------------------------------------------------- #
# Parsing helpers
# ---------------------------------------------------------------------- #

def parse_float_list(text: str, name: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--{name} must be a comma-separated list of numbers, got '{text}'")
    if not values:
        raise ConfigError(f"--{name} is empty")
    return values


def parse_int_list(text: str, name: str) -> List[int]:
    values = parse_float_list(text, name)
    if any(v != int(v) or v < 1 for v in values):
        raise ConfigError(f"--{name} must list positive integers, got '{text}'")
    return [int(v) for v in values]


def parse_grid(text: Optional[str], w: np.ndarray) -> np.ndarray:
    """'a:b:count' or None for GRID_POINTS points over [min w, max w]."""
    if text is None:
        return np.linspace(float(np.min(w)), float(np.max(w)), GRID_POINTS)
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"--grid must look like a:b:count, got '{text}'")
    try:
        a, b, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigError(f"--grid must look like a:b:count, got '{text}'")
    if count < 2 or not a < b:
        raise ConfigError(f"--grid needs a < b and count >= 2, got '{text}'")
    return np.linspace(a, b, count)


def read_data(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read columns y and w from a UTF-8 CSV with a header row."""
    if not os.path.exists(path):
        raise InputError(f"input file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, encoding="utf-8", skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise InputError(f"{path} is empty", line=1)
    except pd.errors.ParserError as exc:
        raise InputError(f"{path} is not valid CSV: {exc}")
    except UnicodeDecodeError as exc:
        raise InputError(f"{path} is not UTF-8: {exc}")
    frame.columns = [str(c).strip() for c in frame.columns]
    values = {}
    for column in ("y", "w"):
        if column not in frame.columns:
            raise InputError(f"missing required column '{column}' (found: {', '.join(frame.columns)})", column=column)
        numeric = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = ~np.isfinite(numeric.to_numpy(dtype=float))
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            # data rows start on line 2
            raise InputError(f"column '{column}' has non-numeric value {frame[column].iloc[row]!r}", line=row + 2, column=column)
        values[column] = numeric.to_numpy(dtype=float)
    if values["y"].size == 0:
        raise InputError(f"{path} has no data rows", line=2)
    return values["y"], values["w"]


def write_curve(path: str, grid: np.ndarray, curve: np.ndarray) -> None:
    pd.DataFrame({"d": grid, "fitted_mean": curve}, columns=CURVE_COLUMNS).to_csv(path, index=False)


def error_model(args) -> ErrorModel:
    if args.sigma_w is not None and args.sigma_w2 is not None:
        raise ConfigError("give either --sigma-w or --sigma-w2, not both")
    for value in (args.sigma_w, args.sigma_w2):
        if value is not None and not (np.isfinite(value) and value >= 0):
            raise ConfigError(f"measurement-error scale must be non-negative, got {value}")
    if args.sigma_w is not None:
        return ErrorModel.from_sd(args.sigma_w)
    return ErrorModel(args.sigma_w2 or 0.0)


def build_config(args, default_samples: Optional[int] = None) -> OsmeeConfig:
    return OsmeeConfig(
        family=args.family,
        link=args.link,
        trials=args.trials,
        basis=args.basis,
        basis_dim=args.basis_dim,
        sampler=args.sampler,
        S=args.mc_samples or default_samples or get_mc_samples(),
        method=args.method,
        seed=args.seed if args.seed is not None else get_default_seed(),
        robust_variance=args.robust_variance,
        theta=args.theta,
        gamma=args.gamma,
    )


# ---------------------------------------------------------------------- #
# Subcommands
# ---------------------------------------------------------------------- #

def cmd_fit(args) -> int:
    y, w = read_data(args.input)
    cfg = build_config(args)
    err = error_model(args)
    grid = parse_grid(args.grid, w)
    print(f"📊 Fitting {y.size} observations: family={cfg.family}, basis={cfg.basis_kind.kind}, sigma_w2={err.sigma_w2:g}")
    fit = run_osmee(y, w, err, cfg)
    output = args.output or "osmee_curve.csv"
    write_curve(output, grid, fit.predict(grid))
    report = os.path.splitext(output)[0] + ".report.txt"
    with open(report, "w", encoding="utf-8") as fh:
        fh.write(fit.summary())
    if not fit.converged:
        print(f"⚠️  Stopped after {fit.n_iter} iterations without stabilizing; lowest-QGCV iterate kept")
    print(f"✅ Curve written to {output} ({grid.size} points)")
    print(f"✅ Fit report written to {report}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    case = get_case(args.case)
    if args.paper_scale:
        reps, n_list, samples = PAPER_REPS, list(PAPER_N_LIST), MC_SAMPLES
    else:
        reps, n_list, samples = DESK_REPS, list(DESK_N_LIST), MC_SAMPLES_DESK
    if args.reps is not None:
        reps = args.reps
    if args.n_list is not None:
        n_list = parse_int_list(args.n_list, "n-list")
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    cfg = build_config(args, default_samples=samples)
    output = args.output or f"study_case{case.id}_{cfg.family}_{args.xdist}.csv"
    print(f"📊 Case {case.id}, {cfg.family}, x {args.xdist}: n in {n_list}, {reps} replicates, S={cfg.S}")
    table = run_study(case, cfg.family, n_list, reps, estimators, args.xdist, cfg.seed, cfg, output=output)
    print(table.to_string(index=False))
    failed = int(table["reps_failed"].sum())
    if failed:
        print(f"⚠️  {failed} replicate fits failed and were excluded")
    print(f"✅ Study table written to {output}")
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    y, w = read_data(args.input)
    cfg = build_config(args)
    sigma_list = parse_float_list(args.sigma_w2_list, "sigma-w2-list")
    if any(s < 0 for s in sigma_list):
        raise ConfigError("--sigma-w2-list values must be non-negative")
    grid = parse_grid(args.grid, w)
    prefix = args.output or "osmee_sensitivity"
    print(f"📊 Sensitivity sweep over sigma_w2 = {', '.join(f'{s:g}' for s in sigma_list)}"
          + (" (log scale)" if args.log_transform else ""))
    long, ratios = sensitivity_sweep(y, w, sigma_list, cfg, grid, args.log_transform)
    for s2 in sigma_list:
        part = long[long["sigma_w2"] == s2]
        write_curve(f"{prefix}_sigma_w2_{s2:g}.csv", part["d"].to_numpy(), part["fitted_mean"].to_numpy())
    long.to_csv(f"{prefix}_curves.csv", index=False)
    ratios.to_csv(f"{prefix}_reliability.csv", index=False)
    print(ratios.to_string(index=False))
    print(f"✅ {len(sigma_list)} curves written with prefix {prefix}")
    return EXIT_OK


# ---------------------------------------------------------------------- #
# Argument parser
# ---------------------------------------------------------------------- #

def _add_model_flags(parser: argparse.ArgumentParser, default_family: str = "gaussian") -> None:
    parser.add_argument("--family", default=default_family, help=f"Response family: {', '.join(FAMILIES)}")
    parser.add_argument("--link", default=None, help="Link function (defaults to the family's link)")
    parser.add_argument("--trials", type=int, default=1, help="Binomial trials")
    parser.add_argument("--basis", default=BASIS_KIND, help="thin_plate, cubic_regression, p_spline, truncated_linear (or tp, cr, ps, tr)")
    parser.add_argument("--basis-dim", type=int, default=BASIS_DIM, help="Basis dimension")
    parser.add_argument("--sampler", default="gaussian", choices=SAMPLERS, help="Posterior sampler for x | w")
    parser.add_argument("--mc-samples", type=int, default=None, help="Monte-Carlo draws per observation")
    parser.add_argument("--method", default="reml", choices=METHODS, help="Smoothing-parameter criterion")
    parser.add_argument("--theta", type=float, default=None, help="Known negative binomial shape")
    parser.add_argument("--gamma", type=float, default=None, help="Known gamma shape")
    parser.add_argument("--seed", type=int, default=None, help="Base random seed (OSMEE_SEED)")
    parser.add_argument("--robust-variance", action="store_true", help="MAD-based spread of the Monte-Carlo means")
    parser.add_argument("--output", default=None, help="Output file (fit, simulate) or prefix (sensitivity)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osmee", description="Semiparametric GLM regression with an error-prone predictor")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="More log output (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Fit one data set and write the curve")
    _add_model_flags(fit)
    fit.add_argument("--input", required=True, help="CSV with columns y and w")
    fit.add_argument("--sigma-w", type=float, default=None, help="Measurement-error standard deviation")
    fit.add_argument("--sigma-w2", type=float, default=None, help="Measurement-error variance")
    fit.add_argument("--grid", default=None, help="a:b:count (default 101 points over the range of w)")
    fit.set_defaults(handler=cmd_fit)

    sim = sub.add_parser("simulate", help="Replicate study on a benchmark case")
    _add_model_flags(sim, default_family="poisson")
    sim.add_argument("--case", type=int, required=True, help="Benchmark case 1-4")
    sim.add_argument("--xdist", default="gaussian", choices=XDISTS, help="Distribution of the true predictor")
    sim.add_argument("--n-list", default=None, help="Comma-separated sample sizes")
    sim.add_argument("--reps", type=int, default=None, help="Replicates per sample size")
    sim.add_argument("--estimators", default=",".join(DEFAULT_ESTIMATORS),
                     help="Comma-separated: naive, osmee_gaussian, osmee_deconv, osmee_gaussian_gcv")
    sim.add_argument("--paper-scale", action="store_true", help="300 replicates, n up to 2048, S=3000")
    sim.set_defaults(handler=cmd_simulate)

    sens = sub.add_parser("sensitivity", help="Refit over a list of measurement-error variances")
    _add_model_flags(sens)
    sens.add_argument("--input", required=True, help="CSV with columns y and w")
    sens.add_argument("--sigma-w2-list", default=",".join(f"{s:g}" for s in SENSITIVITY_SIGMA_W2),
                      help="Comma-separated measurement-error variances")
    sens.add_argument("--log-transform", action="store_true", help="Fit on log w with variances rescaled")
    sens.add_argument("--grid", default=None, help="a:b:count (default 101 points over the range of w)")
    sens.set_defaults(handler=cmd_sensitivity)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    # already logged by the library
    warnings.simplefilter("ignore", OsmeeWarning)
    try:
        return args.handler(args)
    except (InputError, ConfigError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OsmeeError as exc:
        print(f"❌ Fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main() or 0)
