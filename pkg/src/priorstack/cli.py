"""Command-line front end: fit, predict, simulate, evaluate.

All file formats are comma-separated UTF-8 with a mandatory header row and
'.' decimals. Every command is deterministic given --seed; --threads only
caps worker counts and never changes results. Exit codes: 0 ok, 2 usage,
3 data validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .calibration import DEFAULT_TAU_GRID, PriorEffects
from .errors import (ConfigurationError, DataValidationError,
                     DegenerateFoldError, DegenerateResponseError,
                     InvalidParameterError, PriorstackError, UndefinedMetricError)
from .glm import Dataset, Family, intercept_only_mu, mean_deviance
from .numerics import RngStream
from .simulation import (BENCHMARK_METHODS, ExternalSimConfig, InternalSimConfig,
                         concordance_index, relative_test_loss, run_replicate,
                         simulate_external, simulate_internal)
from .stacking import (StackConfig, fit_transfer_model, load_model, predict,
                       save_model)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _parse_cell(text: str, path: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(
            f"{path}: cannot parse '{text}' as a number (row {row}, column '{col}')")
    if not np.isfinite(value):
        raise DataValidationError(
            f"{path}: non-finite value (row {row}, column '{col}')")
    return value


def read_matrix_csv(path: str) -> tuple[np.ndarray, list[str]]:
    """Numeric matrix with a header row of column names."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: file is empty")
        rows = []
        for i, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise DataValidationError(
                    f"{path}: row {i} has {len(record)} cells, expected {len(header)}")
            rows.append([_parse_cell(c, path, i, header[j])
                         for j, c in enumerate(record)])
    if not rows:
        raise DataValidationError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64), header


def read_target_csv(path: str) -> np.ndarray:
    X, header = read_matrix_csv(path)
    if X.shape[1] != 1:
        raise DataValidationError(
            f"{path}: target file must have exactly one column, got {X.shape[1]}")
    return X[:, 0]


def read_priors_csv(path: str, feature_names: list[str]) -> PriorEffects:
    """Prior effects joined to the feature matrix by feature name.

    Features absent from the priors file get prior effect 0 (logged);
    priors naming an unknown feature are an error.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"{path}: file is empty")
        if len(header) < 1:
            raise DataValidationError(f"{path}: header row is empty")
        source_names = header[1:]
        index = {name: j for j, name in enumerate(feature_names)}
        Z = np.zeros((len(feature_names), len(source_names)))
        seen = set()
        for i, record in enumerate(reader, start=1):
            if len(record) != len(header):
                raise DataValidationError(
                    f"{path}: row {i} has {len(record)} cells, expected {len(header)}")
            name = record[0]
            if name not in index:
                raise DataValidationError(
                    f"{path}: prior feature '{name}' (row {i}) does not appear "
                    "in the feature file")
            if name in seen:
                raise DataValidationError(f"{path}: duplicate prior feature '{name}' (row {i})")
            seen.add(name)
            for k, cell in enumerate(record[1:]):
                Z[index[name], k] = _parse_cell(cell, path, i, header[k + 1])
    missing = [n for n in feature_names if n not in seen]
    for name in missing:
        print(f"note: no prior effect for feature '{name}', using 0", file=sys.stderr)
    return PriorEffects(Z=Z, source_names=source_names)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(c)) if isinstance(c, float) else c for c in row])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    X, feature_names = read_matrix_csv(args.features)
    y = read_target_csv(args.target)
    if len(y) != X.shape[0]:
        raise DataValidationError(
            f"feature file has {X.shape[0]} rows but target file has {len(y)}")
    data = Dataset(X, y, Family(args.family))
    if args.priors:
        priors = read_priors_csv(args.priors, feature_names)
    else:
        priors = PriorEffects(Z=np.zeros((X.shape[1], 0)), source_names=[])
    tau_grid = DEFAULT_TAU_GRID
    if args.tau_grid:
        tau_grid = tuple(float(t) for t in args.tau_grid.split(","))
        if any(t < 0 for t in tau_grid):
            raise InvalidParameterError("tau grid entries must be >= 0")
    config = StackConfig(calibration=args.calibration, stacking=args.stacking,
                         alpha=args.alpha, folds=args.folds, seed=args.seed,
                         filter_sources=not args.no_filter, tau_grid=tau_grid,
                         threads=args.threads)
    model, meta, report = fit_transfer_model(data, priors, config)
    save_model(model, args.out)
    print(f"family: {args.family}")
    print(f"samples: {data.n}  features: {data.p}")
    print(f"sources retained: {report.retained} of {len(report.source_rows)}")
    for row in report.source_rows:
        state = "retained" if row["retained"] else "dropped"
        print(f"  source {row['name']}: p-value {row['pvalue']:.6g} "
              f"{state} omega {row['omega']:.6g}")
    print(f"lambda_min: {report.lambda_min:.6g}  lambda_1se: {report.lambda_1se:.6g}")
    print(f"cv loss at lambda_min: {report.cv_loss_min:.6g}")
    if report.meta_lambda is not None:
        print(f"meta lambda: {report.meta_lambda:.6g}")
    print(f"model written: {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    X, _ = read_matrix_csv(args.features)
    mu = predict(model, X)
    write_csv(args.out, ["prediction"], [[float(v)] for v in mu])
    print(f"predictions written: {args.out}")
    return EXIT_OK


def _scenario_columns(args, protocol: str, alpha: float) -> list:
    if protocol == "external":
        return [protocol, args.family, args.Ka, repr(float(args.h)), args.s_resolved,
                "", "", "", "", repr(float(alpha))]
    return [protocol, args.family, "", "", "", repr(float(args.rho_x)),
            repr(float(args.rho_beta)), repr(float(args.pi_resolved)),
            repr(float(args.w)), repr(float(alpha))]


def cmd_simulate(args) -> int:
    family = Family(args.family)
    if args.dense and args.sparse:
        raise ConfigurationError("--dense and --sparse are mutually exclusive")
    sparse = bool(args.sparse)
    alpha_source = 0.95 if sparse else 0.0
    alpha_target = 1.0 if sparse else 0.0
    if args.alpha is not None:
        alpha_target = args.alpha

    if args.protocol == "external":
        args.s_resolved = args.s if args.s is not None else (15 if sparse else 50)
        cfg = ExternalSimConfig(family=family, h=args.h, s=args.s_resolved,
                                Ka=args.Ka, n_test=args.n_test,
                                alpha_source=alpha_source)
        make_sim = simulate_external
    else:
        args.pi_resolved = args.pi if args.pi is not None else (0.05 if sparse else 0.2)
        cfg = InternalSimConfig(family=family, rho_x=args.rho_x,
                                rho_beta=args.rho_beta, pi=args.pi_resolved,
                                w=args.w, n_test=args.n_test,
                                alpha_source=alpha_source)
        make_sim = simulate_internal

    header = ["protocol", "family", "Ka", "h", "s", "rho_x", "rho_beta", "pi", "w",
              "alpha", "method", "replicate", "relative_loss", "cindex"]
    rows = []
    for rep in range(args.reps):
        sim = make_sim(cfg, RngStream(args.seed, f"sim/rep{rep}"))
        results = run_replicate(sim, alpha_target, RngStream(args.seed, f"rep{rep}/fit"),
                                methods=BENCHMARK_METHODS, folds=args.folds,
                                threads=args.threads)
        scenario = _scenario_columns(args, args.protocol, alpha_target)
        for method in BENCHMARK_METHODS:
            vals = results[method]
            rows.append(scenario + [method, rep,
                                    repr(float(vals["relative_loss"])),
                                    repr(float(vals["cindex"])) if "cindex" in vals else ""])
    write_csv(args.out, header, rows)
    print(f"results written: {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = read_target_csv(args.predictions)
    truth = read_target_csv(args.truth)
    if len(pred) != len(truth):
        raise DataValidationError(
            f"{len(pred)} predictions vs {len(truth)} truths")
    family = Family(args.family)
    if family == Family.BINOMIAL and not np.all(np.isin(truth, (0.0, 1.0))):
        raise DataValidationError("binomial truth values must be coded 0/1")
    metrics = {
        "mean_deviance": mean_deviance(family, truth, pred),
        "relative_loss": relative_test_loss(
            family, truth, pred, intercept_only_mu(family, truth)),
    }
    if family == Family.BINOMIAL:
        metrics["cindex"] = concordance_index(truth, pred)
    text = json.dumps(metrics, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"metrics written: {args.out}")
    else:
        print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="priorstack",
        description="Penalised regression with calibrated prior effects")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a transfer model from CSV data")
    fit.add_argument("--features", required=True, help="CSV, n rows x p columns, header = feature names")
    fit.add_argument("--target", required=True, help="CSV with a single target column")
    fit.add_argument("--priors", help="CSV: feature name column plus one column per source")
    fit.add_argument("--family", choices=["gaussian", "binomial"], required=True)
    fit.add_argument("--calibration", choices=["exp", "iso"], default="iso")
    fit.add_argument("--stacking", choices=["sta", "sim"], default="sta")
    fit.add_argument("--alpha", type=float, default=1.0, help="elastic-net mix of the direct learner")
    fit.add_argument("--folds", type=int, default=10)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--no-filter", action="store_true", help="keep all sources regardless of the significance filter")
    fit.add_argument("--tau-grid", help="comma-separated exponent grid for exponential calibration")
    fit.add_argument("--threads", type=int, default=1)
    fit.add_argument("--out", required=True, help="path for the model JSON")
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="predict with a stored model")
    pred.add_argument("--model", required=True)
    pred.add_argument("--features", required=True)
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    simp = sub.add_parser("simulate", help="run a benchmark protocol")
    simp.add_argument("--protocol", choices=["external", "internal"], required=True)
    simp.add_argument("--family", choices=["gaussian", "binomial"], default="gaussian")
    simp.add_argument("--Ka", type=int, default=5, help="transferable source count (external)")
    simp.add_argument("--h", type=float, default=5.0, help="source coefficient perturbation (external)")
    simp.add_argument("--s", type=int, help="causal feature count (external)")
    simp.add_argument("--dense", action="store_true", help="dense regime: s=50 / pi=0.2, ridge")
    simp.add_argument("--sparse", action="store_true", help="sparse regime: s=15 / pi=0.05, lasso")
    simp.add_argument("--rho-x", type=float, default=0.95, dest="rho_x", help="feature correlation (internal)")
    simp.add_argument("--rho-beta", type=float, default=0.99, dest="rho_beta", help="coefficient correlation (internal)")
    simp.add_argument("--pi", type=float, help="causal proportion (internal)")
    simp.add_argument("--w", type=float, default=0.5, help="signal weight (internal)")
    simp.add_argument("--alpha", type=float, help="override the target elastic-net mix")
    simp.add_argument("--reps", type=int, default=10)
    simp.add_argument("--n-test", type=int, default=10_000, dest="n_test")
    simp.add_argument("--folds", type=int, default=10)
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--threads", type=int, default=1)
    simp.add_argument("--out", required=True, help="path for the results CSV")
    simp.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("evaluate", help="score predictions against truths")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--family", choices=["gaussian", "binomial"], required=True)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigurationError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateResponseError, DegenerateFoldError, UndefinedMetricError,
            np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PriorstackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
