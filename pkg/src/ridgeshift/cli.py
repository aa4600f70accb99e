"""Command-line front end.

Subcommands take a JSON model config plus numeric flags and emit
machine-readable tables (CSV by default, JSON with a fixed schema). All
floats are printed with 17 significant digits so reruns are byte-identical.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 numeric
failure (the failing cell is named on stderr).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .conditions import (
    MuGrid,
    check_cov_shift_overparam,
    check_in_dist_alignment,
    check_reg_shift_alignment,
    check_reg_shift_general_balance,
    check_strict_alignment_implication,
    predict_sign,
)
from .errors import (
    BelowMinimumPenaltyError,
    BranchViolationError,
    InvalidParameterError,
    RidgeShiftError,
    SingularResolventError,
    SolverFailureError,
)
from .fixed_point import (
    PSI_INFINITE,
    equivalence_path,
    lambda_min,
    mu_zero,
    solve_mu,
    tilde_v,
)
from .model import ModelConfig, ShiftModel, build_model
from .risk import (
    SearchOptions,
    ensemble_risk,
    optimal_lambda,
    optimal_psi,
    risk_decomposition,
)
from .simulate import EnsembleConfig, SimConfig, mc_experiment

_NUMERIC_ERRORS = (
    BelowMinimumPenaltyError,
    BranchViolationError,
    SingularResolventError,
    SolverFailureError,
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _parse_grid(spec: str) -> np.ndarray:
    """start:stop:count[:log] -> inclusive grid."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise InvalidParameterError(f"bad grid spec {spec!r}; want start:stop:count[:log]")
    start, stop = float(parts[0]), float(parts[1])
    count = int(parts[2])
    if count < 1:
        raise InvalidParameterError("grid count must be >= 1")
    if len(parts) == 4:
        if parts[3] != "log":
            raise InvalidParameterError(f"bad grid suffix {parts[3]!r}")
        if start <= 0.0 or stop <= 0.0:
            raise InvalidParameterError("log grid needs positive endpoints")
        return np.geomspace(start, stop, count)
    return np.linspace(start, stop, count)


def _write_table(args, command: str, params: dict, columns: list[str], rows: list[tuple]) -> None:
    if args.format == "json":
        def clean(v):
            # keep strict-JSON validity: no NaN/Infinity literals
            if isinstance(v, float):
                if math.isnan(v):
                    return None
                if math.isinf(v):
                    return "inf" if v > 0 else "-inf"
            return v

        payload = {
            "command": command,
            "params": {k: clean(v) for k, v in params.items()},
            "columns": columns,
            "rows": [[clean(v) for v in row] for row in rows],
        }
        text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
    else:
        lines = [",".join(columns)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_model(args) -> ShiftModel:
    if not getattr(args, "config", None):
        raise InvalidParameterError("this subcommand needs --config")
    return build_model(ModelConfig.from_json_file(args.config))


def _cmd_fixpoint(args) -> None:
    model = _load_model(args)
    phi = args.phi
    psi = args.psi if args.psi is not None else phi
    sol = solve_mu(model.spectrum, args.lam, psi, boundary_ok=psi > phi)
    tv = tilde_v(model, sol.mu, phi, psi)
    _write_table(
        args,
        "fixpoint",
        {"lambda": args.lam, "phi": phi, "psi": psi},
        ["lambda", "phi", "psi", "mu", "v", "tilde_v", "residual"],
        [(args.lam, phi, psi, sol.mu, sol.v, tv, sol.residual)],
    )


def _cmd_lambdamin(args) -> None:
    model = _load_model(args)
    phis = _parse_grid(args.grid)
    rows = []
    for phi in phis:
        m0 = mu_zero(model.spectrum, float(phi))
        rows.append((float(phi), m0, lambda_min(model.spectrum, float(phi))))
    _write_table(args, "lambdamin", {"grid": args.grid},
                 ["phi", "mu_zero", "lambda_min"], rows)


def _cmd_risk(args) -> None:
    model = _load_model(args)
    lams = _parse_grid(args.grid)
    rows = []
    for lam in lams:
        d = risk_decomposition(model, float(lam), args.phi)
        rows.append((float(lam), args.phi, d.bias, d.variance, d.shift, d.kappa2, d.total))
    _write_table(args, "risk", {"phi": args.phi, "grid": args.grid},
                 ["lambda", "phi", "bias", "variance", "shift", "kappa2", "total"], rows)


def _cmd_optimize(args) -> None:
    model = _load_model(args)
    phi = args.phi
    opts = SearchOptions(lambda_floor=args.lambda_floor)
    point = optimal_lambda(model, phi, opts)
    lmin = lambda_min(model.spectrum, phi)
    naive = -model.spectrum.r_min * (1.0 - math.sqrt(phi)) ** 2
    columns = [
        "row_type", "lambda", "psi", "risk", "mu", "boundary",
        "lambda_min", "naive_lambda_min",
    ]
    rows: list[tuple] = [
        ("optimum", point.lambda_star, phi, point.risk_star, point.mu_star,
         point.boundary_flag, lmin, naive)
    ]
    for lam, risk in point.local_minima[1:]:
        rows.append(("local-min", lam, phi, risk, solve_mu(model.spectrum, lam, phi).mu,
                     "", lmin, naive))
    if args.joint:
        # anchor penalty per the subsampling equivalence: ridgeless when
        # underparameterized, the minimum penalty otherwise
        anchor = 0.0 if phi < 1.0 else lmin
        psi_star, risk_star = optimal_psi(model, anchor, phi)
        rows.append(("joint-optimum", anchor,
                     math.inf if psi_star == PSI_INFINITE else psi_star,
                     risk_star, math.nan, "", lmin, naive))
    _write_table(args, "optimize", {"phi": phi}, columns, rows)


def _cmd_conditions(args) -> None:
    model = _load_model(args)
    phi = args.phi
    grid = MuGrid(points=args.grid_points)
    rows: list[tuple] = []

    def add(report) -> None:
        rows.append(("condition", report.condition_id, str(report.holds),
                     report.worst_margin, report.grid))

    if phi > 1.0 and not model.is_isotropic_signal:
        add(check_in_dist_alignment(model, phi, grid))
    if model.spectrum.is_identity and phi > 1.0:
        add(check_cov_shift_overparam(model, phi))
    if not model.is_isotropic_signal and model.has_regression_shift:
        add(check_reg_shift_alignment(model, grid))
    add(check_reg_shift_general_balance(model, phi, grid))
    add(check_strict_alignment_implication(model))
    pred = predict_sign(model, phi, grid)
    rows.append(("sign-prediction", pred.predicted_sign, pred.regime, math.nan,
                 pred.applied_rule))
    _write_table(args, "conditions", {"phi": phi},
                 ["record", "id", "value", "worst_margin", "detail"], rows)


def _cmd_path(args) -> None:
    model = _load_model(args)
    path = equivalence_path(
        model.spectrum,
        args.phi,
        lambda_bar=args.lambda_bar,
        psi_bar=args.psi_bar,
        samples=args.samples,
    )
    rows = []
    for theta, lam, psi in path.points:
        sol = solve_mu(model.spectrum, lam, psi, boundary_ok=True)
        rows.append((theta, lam, psi, sol.mu))
    _write_table(
        args, "path",
        {"phi": args.phi, "lambda_bar": path.lambda_bar, "psi_bar": path.psi_bar,
         "mu_star": path.mu_star},
        ["theta", "lambda", "psi", "mu"], rows,
    )


def _cmd_simulate(args) -> None:
    model = _load_model(args)
    lams = _parse_grid(args.grid)
    ensemble = None
    if args.psi is not None:
        ensemble = EnsembleConfig(psi=args.psi, n_subsamples=args.subsamples)
    config = SimConfig(
        p=model.p, phi=args.phi, reps=args.reps, seed=args.seed,
        ensemble=ensemble, include_plain=not args.ensemble_only,
        threads=args.threads,
        keep_replicates=args.dump_replicates is not None,
    )
    result = mc_experiment(model, config, [float(l) for l in lams])
    if args.dump_replicates:
        result.dump_replicates_csv(args.dump_replicates)
    _write_table(
        args, "simulate",
        {"phi": args.phi, "seed": args.seed, "reps": args.reps},
        ["lambda", "phi", "psi", "empirical_mean", "empirical_se", "theory_total", "rel_error"],
        result.to_rows(),
    )


def _cmd_sweep(args) -> None:
    model = _load_model(args)
    lams = _parse_grid(args.grid)
    rows: list[tuple] = []
    if args.psi_grid is not None:
        if args.phi is None:
            raise InvalidParameterError("--psi-grid mode needs --phi")
        phi = args.phi
        psis = _parse_grid(args.psi_grid)
        for lam in lams:
            for psi in psis:
                try:
                    total = ensemble_risk(model, float(lam), phi, float(psi)).total
                except (InvalidParameterError, *_NUMERIC_ERRORS):
                    total = math.nan
                rows.append((float(lam), float(psi), total))
    elif args.phi_grid is not None:
        phis = _parse_grid(args.phi_grid)
        for lam in lams:
            for phi in phis:
                try:
                    total = risk_decomposition(model, float(lam), float(phi)).total
                except (InvalidParameterError, *_NUMERIC_ERRORS):
                    total = math.nan
                rows.append((float(lam), float(phi), total))
    else:
        raise InvalidParameterError("sweep needs --psi-grid or --phi-grid")
    _write_table(args, "sweep", {"grid": args.grid}, ["x", "y", "total"], rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ridgeshift",
        description="Deterministic risk equivalents and optimal ridge penalties "
        "under distribution shift",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="model config JSON path")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("fixpoint", help="solve the penalty equation at one point")
    common(p)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--psi", type=float, default=None)
    p.set_defaults(func=_cmd_fixpoint)

    p = sub.add_parser("lambdamin", help="minimum penalty over an aspect-ratio grid")
    common(p)
    p.add_argument("--grid", required=True, help="phi grid start:stop:count[:log]")
    p.set_defaults(func=_cmd_lambdamin)

    p = sub.add_parser("risk", help="risk decomposition over a penalty grid")
    common(p)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--grid", required=True, help="lambda grid start:stop:count[:log]")
    p.set_defaults(func=_cmd_risk)

    p = sub.add_parser("optimize", help="minimize risk over the penalty")
    common(p)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--lambda-floor", type=float, default=None)
    p.add_argument("--joint", action="store_true",
                   help="also minimize over the subsample aspect ratio")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("conditions", help="alignment checks and sign prediction")
    common(p)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--grid-points", type=int, default=400)
    p.set_defaults(func=_cmd_conditions)

    p = sub.add_parser("path", help="penalty/subsample equivalence contour")
    common(p)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--lambda-bar", type=float, default=None)
    p.add_argument("--psi-bar", type=float, default=None)
    p.add_argument("--samples", type=int, default=33)
    p.set_defaults(func=_cmd_path)

    p = sub.add_parser("simulate", help="Monte Carlo validation of the equivalents")
    common(p)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--grid", required=True, help="lambda grid start:stop:count[:log]")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--psi", type=float, default=None, help="ensemble subsample aspect ratio")
    p.add_argument("--subsamples", type=int, default=100)
    p.add_argument("--ensemble-only", action="store_true",
                   help="skip the plain-ridge cells (penalties only valid at --psi)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dump-replicates", default=None, help="CSV path for raw replicate risks")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="2-d grid of theory totals (long format)")
    common(p)
    p.add_argument("--phi", type=float, default=None, help="data aspect ratio for --psi-grid mode")
    p.add_argument("--grid", required=True, help="lambda grid start:stop:count[:log]")
    p.add_argument("--psi-grid", default=None, help="psi grid start:stop:count[:log]")
    p.add_argument("--phi-grid", default=None, help="phi grid start:stop:count[:log]")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (InvalidParameterError, OSError, json.JSONDecodeError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except _NUMERIC_ERRORS as exc:
        print(f"error: numeric failure in {args.command}: {exc}", file=sys.stderr)
        return 2
    except RidgeShiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
