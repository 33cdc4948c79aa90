"""Command-line interface: ``icmpr {fit,select,npmle,predict,simulate}``.

Exit codes: 0 success, 2 parse error, 3 non-convergence, 4 non-identifiable
data, 5 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import DataError, InvalidCovarianceError, NonIdentifiableError, SpecError
from .estimator import FitOptions, fit, predict_median
from .model import ModelSpec, ModelType, evaluate_parameters, hazard, marginal_hazard, marginal_survivor
from .selection import _roman, fit_model_grid, stepwise
from .simulation import Scenario, run_study
from .turnbull import turnbull_fit

EXIT_OK, EXIT_PARSE, EXIT_NONCONVERGENCE, EXIT_NONIDENTIFIABLE, EXIT_VALIDATION = 0, 2, 3, 4, 5
OUTPUT_ENV = "ICMPR_OUTPUT_DIR"

log = logging.getLogger("icmpr")


class NonConvergence(Exception):
    pass


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or ".")


def _load(args):
    return io.load_csv(args.data, time_offset=args.time_offset, clamp_left=args.clamp_left)


def cmd_fit(args) -> int:
    data = _load(args)
    data, spec = io.resolve_spec(data, args.type, io.parse_terms(args.scale), io.parse_terms(args.shape),
                                 io.parse_terms(args.disp), args.time_offset)
    res = fit(spec, data, FitOptions(max_iter=args.max_iter))
    bundle = io.bundle_from_fit(res)
    out = _out_dir(args)
    io.atomic_write(out / "fit.json", bundle.to_json())
    header, rows = bundle.coefficient_rows()
    io.atomic_write(out / "coefficients.csv", io.format_csv(header, rows))
    io.atomic_write(out / "criteria.csv", io.format_csv(
        ["model", "loglik", "k", "n", "AIC", "BIC", "converged"],
        [[spec.describe(data.column_names), bundle.loglik, bundle.k, bundle.n, bundle.aic, bundle.bic,
          bundle.converged]]))
    print(f"{spec.describe(data.column_names)}  loglik={res.loglik:.6g}  AIC={res.aic:.6g}  "
          f"BIC={res.bic:.6g}  converged={res.converged}")
    for c in bundle.coefficients:
        star = "*" if c["significant"] else ""
        se = "" if c["se"] is None else f" ({c['se']:.4g})"
        print(f"  {c['parameter']:<28s} {c['estimate']: .4g}{star}{se}")
    if not res.converged:
        raise NonConvergence(res.message)
    return EXIT_OK


def cmd_select(args) -> int:
    data = _load(args)
    structures, labels = [], []
    for k, chunk in enumerate(args.structures.split(";"), start=1):
        terms = io.parse_terms(chunk)
        data = io.with_terms(data, terms)
        structures.append(tuple(data.column_names.index(t) for t in terms))
        labels.append(_roman(k))
    types = [ModelType(t.strip()) for t in args.types.split(",")] if args.types else list(ModelType)
    opts = FitOptions(max_iter=args.max_iter)
    grid = fit_model_grid(data, structures, types, opts, labels=labels)
    out = _out_dir(args)
    tbl = grid.table.reset_index()
    cols = ["model", "covariates", "loglik", "k", "AIC", "BIC", "dAIC", "dBIC", "converged"]
    io.atomic_write(out / "grid.csv", io.format_csv(cols, tbl[cols].itertuples(index=False)))
    means = grid.type_means.reset_index()
    io.atomic_write(out / "grid_type_means.csv",
                    io.format_csv(list(means.columns), means.itertuples(index=False)))
    report = {"grid": json.loads(tbl.to_json(orient="records")),
              "type_means": json.loads(means.to_json(orient="records")),
              "best_aic": grid.best("AIC"), "best_bic": grid.best("BIC")}
    print(grid.table[["loglik", "k", "AIC", "BIC", "dAIC", "dBIC"]].round(1).to_string())
    print(f"min AIC: {report['best_aic']}   min BIC: {report['best_bic']}")
    if args.stepwise_from:
        if args.stepwise_from not in grid.fits:
            raise SpecError(f"--stepwise-from {args.stepwise_from!r} is not a fitted grid model")
        start = grid.fits[args.stepwise_from].spec
        cands = sorted(set(start.scale_idx) | set(start.shape_idx) | set(start.disp_idx))
        final, trace = stepwise(start, data, cands, args.criterion, opts)
        report["stepwise"] = {
            "start": args.stepwise_from,
            "criterion": args.criterion.upper(),
            "moves": [m.describe(data.column_names) for m in trace],
            "final": final.spec.describe(data.column_names),
            "loglik": final.loglik, "AIC": final.aic, "BIC": final.bic,
        }
        io.atomic_write(out / "stepwise_fit.json", io.bundle_from_fit(final).to_json())
        print(f"stepwise ({args.criterion.upper()}): {' -> '.join(report['stepwise']['moves']) or 'no moves'}")
        print(f"final: {report['stepwise']['final']}  AIC={final.aic:.1f}  BIC={final.bic:.1f}")
    io.atomic_write(out / "select.json", json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_npmle(args) -> int:
    data = _load(args)
    est = turnbull_fit(data)
    io.atomic_write(_out_dir(args) / "npmle.csv",
                    io.format_csv(["t", "S_upper", "S_lower"], est.step_table().tolist()))
    print(f"{len(est.masses)} support intervals, converged={est.converged} after {est.iterations} iterations")
    return EXIT_OK if est.converged else EXIT_NONCONVERGENCE


def cmd_predict(args) -> int:
    try:
        bundle = io.ReportBundle.from_json(Path(args.bundle).read_text())
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"cannot read fit bundle: {exc}") from None
    res = bundle.to_fit()
    spec = res.spec
    groups = io.parse_groups(args.groups)
    ref = args.reference or next(iter(groups))
    if ref not in groups:
        raise SpecError(f"reference group {ref!r} is not defined")
    used = set(spec.scale_idx) | set(spec.shape_idx) | set(spec.disp_idx)
    grid = io.parse_grid(args.grid)
    rows_by_group = {g: io.group_row(bundle.column_names, a, used) for g, a in groups.items()}
    curves = {}
    for g, row in rows_by_group.items():
        p = evaluate_parameters(spec, res.theta_hat, row)
        curves[g] = (hazard(p, grid), marginal_hazard(p, grid), marginal_survivor(p, grid))
    h_ref, mh_ref, _ = curves[ref]
    rows = []
    for g, (h, mh, s) in curves.items():
        for t, hv, mhv, sv, r1, r2 in zip(grid, h, mh, s, h / h_ref, mh / mh_ref):
            rows.append([g, t, hv, mhv, sv, r1, r2])
    out = _out_dir(args)
    io.atomic_write(out / "curves.csv", io.format_csv(
        ["group", "t", "hazard", "marginal_hazard", "marginal_survivor", "hazard_ratio",
         "marginal_hazard_ratio"], rows))
    med_rows = []
    for g, row in rows_by_group.items():
        m = predict_median(res, row)
        nan = float("nan")
        med_rows.append([g, m.median, nan if m.lower is None else m.lower, nan if m.upper is None else m.upper])
        ci = "" if m.lower is None else f" [{m.lower:.2f} {m.upper:.2f}]"
        print(f"{g:<16s} median {m.median:.2f}{ci}")
    io.atomic_write(out / "medians.csv", io.format_csv(["group", "median", "lower", "upper"], med_rows))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        cfg = json.loads(Path(args.scenario).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"invalid scenario JSON: {exc}") from None
    if args.replicates is not None:
        cfg["replicates"] = args.replicates
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        scenario = Scenario.from_dict(cfg)
        fit_cfg = cfg.get("fit")
        fit_spec = None
        if fit_cfg:
            names = scenario.column_names
            fit_spec = ModelSpec(fit_cfg["model_type"], *[
                tuple(names.index(n) for n in fit_cfg.get(k, [])) for k in ("scale", "shape", "disp")])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(f"invalid scenario: {exc}") from None
    summary = run_study(scenario, fit_spec, n_jobs=args.jobs)
    out = _out_dir(args)
    tbl = summary.table.reset_index()
    io.atomic_write(out / "study_summary.csv",
                    io.format_csv(list(tbl.columns), tbl.itertuples(index=False)))
    io.atomic_write(out / "study_summary.json", json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    print(summary.table.round(4).to_string())
    print(f"converged {summary.n_converged}/{summary.n_replicates}; "
          f"censored fraction {summary.censored_fraction:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="icmpr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("data", help="CSV with left, right and covariate columns")
        p.add_argument("--time-offset", type=float, default=0.0)
        p.add_argument("--clamp-left", action="store_true",
                       help="set negative left endpoints (after offset) to zero")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")

    p = sub.add_parser("fit", help="fit one model")
    data_args(p)
    p.add_argument("--type", required=True, choices=[t.value for t in ModelType])
    p.add_argument("--scale", default="")
    p.add_argument("--shape", default="")
    p.add_argument("--disp", default="")
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="model-type by covariate-structure grid, optional stepwise")
    data_args(p)
    p.add_argument("--structures", required=True,
                   help="';'-separated covariate lists, e.g. 'sex;dmf;sex,dmf;sex,dmf,sex:dmf'")
    p.add_argument("--types", default="", help="comma-separated model types (default all six)")
    p.add_argument("--criterion", default="BIC", choices=["AIC", "BIC", "aic", "bic"])
    p.add_argument("--stepwise-from", default=None, help="grid model name to start from, e.g. 'MPRF(IV)'")
    p.add_argument("--max-iter", type=int, default=200)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("npmle", help="Turnbull survivor estimate")
    data_args(p)
    p.set_defaults(func=cmd_npmle)

    p = sub.add_parser("predict", help="hazard/survivor curves and medians from a fit bundle")
    p.add_argument("bundle")
    p.add_argument("--groups", required=True, help="'name=cov:val,cov:val;name2=...'")
    p.add_argument("--reference", default=None, help="reference group (default: first)")
    p.add_argument("--grid", default="0.1:8:80", help="start:stop:num")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="run a simulation study from a JSON scenario")
    p.add_argument("scenario")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonConvergence as exc:
        print(f"error: fit did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except NonIdentifiableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONIDENTIFIABLE
    except (SpecError, InvalidCovarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
