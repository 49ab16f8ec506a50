"""Command-line interface.

Subcommands:

  weights       append bootstrap replicate weight columns to a CSV sample
  fit           fit a survey-weighted regression model
  test          regression hypothesis tests (naive / scaled-F / bootstrap)
  gof           goodness-of-fit tests for category proportions
  independence  two-way table independence tests
  simulate      Monte Carlo power studies (table1..table4)

Reports are deterministic given --seed: rerunning with the same seed
gives byte-identical output regardless of --threads.  Exit codes:
0 success, 2 usage error, 3 bad input data, 4 estimation failure
(singular information, non-convergence, excessive replicate loss).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .bootstrap import bootstrap_weights, write_weights
from .categorical import (gof_bootstrap_test, gof_naive_test, gof_rao_scott,
                          independence_bootstrap_test, independence_naive_test,
                          independence_rao_scott)
from .data import (CsvSchema, DesignKind, load_csv, replicate_proportions,
                   replicate_two_way_tables, weighted_proportions,
                   weighted_two_way_table)
from .errors import DataError, DiagnosticError, SingularInformationError
from .models import MODELS, fit
from .regression import NullSpec, run_regression_test, sandwich_covariance
from .rng import fresh_seed
from .simulation import (ScenarioConfig, emit_report, print_wall_time,
                         run_scenario)

_REGRESSION_METHODS = ("nlr", "nqs", "ls", "blr", "bqs", "wald", "wald-bootstrap")
_CATEGORICAL_METHODS = ("np", "nlr", "rs", "bp", "blr")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (default: fresh entropy)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker processes; never changes the numbers")
    parser.add_argument("--out", default=None, help="output path (default stdout)")
    parser.add_argument("--format", choices=("json", "text", "csv"),
                        default="json", dest="fmt", help="report format")


def _add_schema(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("data", nargs="?", default=None, help="input CSV sample")
    parser.add_argument("--input", dest="input_flag", default=None,
                        help="input CSV sample (same as the positional)")
    parser.add_argument("--design", choices=[d.value for d in DesignKind],
                        default="poisson")
    parser.add_argument("--y", default="y", help="response column")
    parser.add_argument("--x", default=None,
                        help="comma-separated covariate columns "
                             "(default: x1, x2, ... found in the header)")
    parser.add_argument("--weight", default="w", help="design weight column")
    parser.add_argument("--stratum", default=None, help="stratum column")
    parser.add_argument("--cluster", default=None, help="cluster column")
    parser.add_argument("--cluster-size", default=None,
                        help="population cluster size column")
    parser.add_argument("--draw-prob", default=None,
                        help="per-draw selection probability column")
    parser.add_argument("--draw-index", default=None,
                        help="with-replacement draw index column")
    parser.add_argument("--bw-prefix", default="bw_",
                        help="replicate weight column prefix")
    parser.add_argument("--population", type=int, default=None,
                        help="population size N (default: round(sum w))")
    parser.add_argument("--clusters", type=int, default=None,
                        help="number of population clusters (two-stage)")


def _schema(args) -> CsvSchema:
    x = tuple(s.strip() for s in args.x.split(",") if s.strip()) if args.x else ()
    return CsvSchema(
        y=args.y, x=x, weight=args.weight,
        stratum=args.stratum, cluster=args.cluster,
        cluster_size=args.cluster_size,
        draw_prob=args.draw_prob, draw_index=args.draw_index,
        bw_prefix=args.bw_prefix,
    )


def _load(args):
    path = args.data or getattr(args, "input_flag", None)
    if not path:
        raise DataError("no input CSV given (positional or --input)")
    if args.data and args.input_flag and args.data != args.input_flag:
        raise DataError("conflicting positional and --input paths")
    return load_csv(
        path, _schema(args),
        design=DesignKind(args.design),
        population_size=args.population,
        population_clusters=args.clusters,
    )


def _x_names(args, data) -> tuple[str, ...]:
    if args.x:
        return tuple(s.strip() for s in args.x.split(",") if s.strip())
    auto = [c for c in data.columns if c.startswith("x") and c[1:].isdigit()]
    auto.sort(key=lambda s: int(s[1:]))
    if len(auto) != data.n_covariates:
        # columns dict can be missing when the dataset was built in memory
        return tuple(f"x{j + 1}" for j in range(data.n_covariates))
    return tuple(auto)


def _parse_null(spec: str, x_names: tuple[str, ...]) -> NullSpec:
    """--null 'x1=1.0' or 'intercept=0,x2=2'; names map to theta order."""
    indices, values = [], []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise DataError(f"bad null component {part!r}, expected name=value")
        name, _, raw = part.partition("=")
        name = name.strip()
        if name == "intercept":
            idx = 0
        elif name in x_names:
            idx = 1 + x_names.index(name)
        else:
            raise DataError(
                f"unknown coefficient {name!r}; choose from intercept, "
                + ", ".join(x_names)
            )
        try:
            val = float(raw)
        except ValueError:
            raise DataError(f"bad null value {raw!r} for {name}") from None
        indices.append(idx)
        values.append(val)
    if not indices:
        raise DataError("empty null specification")
    return NullSpec(tuple(indices), tuple(values))


def _resolve_seed(args) -> int:
    seed = args.seed if args.seed is not None else fresh_seed()
    print(f"[svyboot] seed: {seed}", file=sys.stderr)
    return seed


def _write(text: str, args) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _float_list(spec: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in spec.split(",") if s.strip())
    except ValueError:
        raise DataError(f"bad numeric list {spec!r}") from None


# ---------------------------------------------------------------------------
# report rendering

def _test_report(results, seed, config) -> dict:
    return {
        "artifact": "svyboot",
        "version": __version__,
        "report": "hypothesis-test",
        "master_seed": seed,
        "config": config,
        "results": [r.to_dict() for r in results],
    }


def _render(payload: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(payload, indent=2) + "\n"
    if fmt == "csv":
        lines = ["method,statistic,p_value,reference,replicates_used,replicates_dropped"]
        for r in payload["results"]:
            ref = r["reference"]["kind"]
            lines.append(
                f"{r['method']},{r['statistic']!r},{r['p_value']!r},{ref},"
                f"{r['replicates_used']},{r['replicates_dropped']}"
            )
        return "\n".join(lines) + "\n"
    lines = [f"svyboot {payload['version']}  seed={payload['master_seed']}"]
    for key, val in payload["config"].items():
        lines.append(f"  {key}: {val}")
    lines.append("")
    lines.append(f"{'method':<30}{'statistic':>24}{'p-value':>24}  reference")
    for r in payload["results"]:
        ref = r["reference"]["kind"]
        params = {k: v for k, v in r["reference"].items() if k != "kind"}
        if params:
            ref += "(" + ", ".join(f"{k}={v}" for k, v in sorted(params.items())) + ")"
        extra = ""
        if r["replicates_dropped"]:
            extra = f"  [dropped {r['replicates_dropped']} replicates]"
        # repr keeps the three formats numerically interchangeable
        lines.append(f"{r['method']:<30}{r['statistic']!r:>24}"
                     f"{r['p_value']!r:>24}  {ref}{extra}")
    return "\n".join(lines) + "\n"


def _fit_report_text(payload: dict) -> str:
    lines = [f"svyboot {payload['version']}  model={payload['config']['model']}"]
    lines.append(f"{'coef':<14}{'estimate':>24}{'se(sandwich)':>24}")
    for name, est, se in zip(payload["coefficients"], payload["theta"],
                             payload["standard_errors"]):
        lines.append(f"{name:<14}{est!r:>24}{se!r:>24}")
    lines.append(f"converged: {payload['converged']}  "
                 f"iterations: {payload['iterations']}  "
                 f"sup|score|: {payload['score_norm']:.3g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# subcommand handlers

def _cmd_weights(args) -> int:
    seed = _resolve_seed(args)
    data = _load(args)
    matrix = bootstrap_weights(data, args.reps, seed)
    if not args.out:
        raise DataError("weights needs --out (CSV output path)")
    write_weights(data, matrix, args.out, bw_prefix=args.bw_prefix)
    print(f"[svyboot] wrote {matrix.n_replicates} replicate weight columns "
          f"to {args.out}", file=sys.stderr)
    return 0


def _cmd_fit(args) -> int:
    seed = _resolve_seed(args)
    data = _load(args)
    model = MODELS[args.model]
    mfit = fit(model, data)
    V = sandwich_covariance(model, data, mfit)
    names = ("intercept",) + _x_names(args, data)
    payload = {
        "artifact": "svyboot",
        "version": __version__,
        "report": "model-fit",
        "master_seed": seed,
        "config": {"model": args.model, "design": args.design,
                   "population_size": data.population_size},
        "coefficients": list(names),
        "theta": [float(v) for v in mfit.theta],
        "standard_errors": [float(v) for v in np.sqrt(np.diag(V))],
        "converged": mfit.converged,
        "iterations": mfit.iterations,
        "score_norm": mfit.score_norm,
        "loglik": mfit.loglik,
    }
    if not mfit.converged:
        raise DiagnosticError("model fit did not converge")
    if args.fmt == "text":
        _write(_fit_report_text(payload), args)
    elif args.fmt == "csv":
        lines = ["coef,estimate,se"]
        for name, est, se in zip(names, payload["theta"], payload["standard_errors"]):
            lines.append(f"{name},{est!r},{se!r}")
        _write("\n".join(lines) + "\n", args)
    else:
        _write(json.dumps(payload, indent=2) + "\n", args)
    return 0


def _needs_matrix(methods) -> bool:
    return any(m in ("ls", "blr", "bqs", "bp", "wald-bootstrap") for m in methods)


def _get_matrix(data, args, seed):
    if getattr(args, "weights_file", None):
        aux = load_csv(args.weights_file, _schema(args),
                       design=DesignKind(args.design),
                       population_size=data.population_size)
        if aux.replicate_weights is None:
            raise DataError(f"{args.weights_file}: no replicate weight columns")
        if aux.n != data.n:
            raise DataError("replicate weight file row count does not match the data")
        return aux.replicate_weights
    if data.replicate_weights is not None:
        return data.replicate_weights
    return bootstrap_weights(data, args.reps, seed)


def _cmd_test(args) -> int:
    seed = _resolve_seed(args)
    data = _load(args)
    model = MODELS[args.model]
    null = _parse_null(args.null, _x_names(args, data))
    methods = tuple(s.strip() for s in args.method.split(",") if s.strip())
    if methods == ("all",):
        methods = ("nlr", "nqs", "ls", "blr", "bqs")
    for m in methods:
        if m not in _REGRESSION_METHODS:
            raise DataError(f"unknown method {m!r}; choose from "
                            + ", ".join(_REGRESSION_METHODS) + ", all")
    matrix = _get_matrix(data, args, seed) if _needs_matrix(methods) else None
    results = [run_regression_test(m, model, data, null, matrix) for m in methods]
    config = {
        "command": "test", "model": args.model, "design": args.design,
        "null": args.null, "methods": list(methods),
        "population_size": data.population_size,
        "n": data.n,
        "bootstrap_replicates": matrix.n_replicates if matrix is not None else 0,
    }
    _write(_render(_test_report(results, seed, config), args.fmt), args)
    return 0


def _cmd_gof(args) -> int:
    seed = _resolve_seed(args)
    data = _load(args)
    p0 = np.asarray(_float_list(args.p0))
    categories = args.categories.split(",") if args.categories else None
    if categories is not None and data.y.dtype != object:
        categories = [type(data.y[0])(float(c)) for c in categories]
    methods = tuple(s.strip() for s in args.method.split(",") if s.strip())
    if methods == ("all",):
        methods = _CATEGORICAL_METHODS
    for m in methods:
        if m not in _CATEGORICAL_METHODS:
            raise DataError(f"unknown method {m!r}; choose from "
                            + ", ".join(_CATEGORICAL_METHODS) + ", all")
    p_hat = weighted_proportions(data, categories)
    if p_hat.size != p0.size:
        raise DataError(
            f"--p0 has {p0.size} entries but the data has {p_hat.size} categories"
        )
    need_reps = any(m in ("rs", "bp", "blr") for m in methods)
    reps = None
    if need_reps:
        matrix = _get_matrix(data, args, seed)
        reps = replicate_proportions(data, categories, matrix)
    results = []
    for m in methods:
        if m == "np":
            results.append(gof_naive_test(p_hat, p0, data.n, "pearson"))
        elif m == "nlr":
            results.append(gof_naive_test(p_hat, p0, data.n, "lrt"))
        elif m == "rs":
            results.append(gof_rao_scott(p_hat, p0, data.n, reps))
        elif m == "bp":
            results.append(gof_bootstrap_test(p_hat, p0, data.n, reps, "pearson"))
        else:
            results.append(gof_bootstrap_test(p_hat, p0, data.n, reps, "lrt"))
    config = {
        "command": "gof", "design": args.design, "p0": [float(v) for v in p0],
        "methods": list(methods), "n": data.n,
        "bootstrap_replicates": reps.shape[1] if reps is not None else 0,
    }
    _write(_render(_test_report(results, seed, config), args.fmt), args)
    return 0


def _cmd_independence(args) -> int:
    seed = _resolve_seed(args)
    data = _load(args)
    methods = tuple(s.strip() for s in args.method.split(",") if s.strip())
    if methods == ("all",):
        methods = _CATEGORICAL_METHODS
    for m in methods:
        if m not in _CATEGORICAL_METHODS:
            raise DataError(f"unknown method {m!r}; choose from "
                            + ", ".join(_CATEGORICAL_METHODS) + ", all")
    table = weighted_two_way_table(data, args.row, args.col)
    need_reps = any(m in ("rs", "bp", "blr") for m in methods)
    rep_tables = None
    if need_reps:
        matrix = _get_matrix(data, args, seed)
        rep_tables = replicate_two_way_tables(
            data, args.row, args.col,
            row_categories=tuple(table.row_categories),
            col_categories=tuple(table.col_categories),
            matrix=matrix,
        )
    results = []
    for m in methods:
        if m == "np":
            results.append(independence_naive_test(table, "pearson"))
        elif m == "nlr":
            results.append(independence_naive_test(table, "lrt"))
        elif m == "rs":
            results.append(independence_rao_scott(table, rep_tables))
        elif m == "bp":
            results.append(independence_bootstrap_test(table, rep_tables, "pearson"))
        else:
            results.append(independence_bootstrap_test(table, rep_tables, "lrt"))
    config = {
        "command": "independence", "design": args.design,
        "row": args.row, "col": args.col, "methods": list(methods),
        "n": data.n, "table_shape": list(table.shape),
        "bootstrap_replicates": rep_tables.shape[0] if rep_tables is not None else 0,
    }
    _write(_render(_test_report(results, seed, config), args.fmt), args)
    return 0


def _cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    cfg = ScenarioConfig(
        scenario=args.scenario,
        mc_reps=args.mc,
        boot_reps=args.reps,
        alpha=args.alpha,
        master_seed=seed,
        threads=args.threads,
        fixed_population=args.fixed_population,
        population_size=args.population,
        sample_size=args.sample_size,
        stratum_sample_size=args.stratum_sample_size,
        n_clusters=args.n_clusters,
        min_cluster_size=args.min_cluster_size,
        n1=args.n1,
        n2=args.n2,
        null_values=_float_list(args.null_values) if args.null_values else None,
        cases=tuple(args.cases.split(",")) if args.cases else None,
    )
    table = run_scenario(cfg)
    print_wall_time(table)
    _write(emit_report(table, args.fmt), args)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svyboot",
        description="bootstrap-calibrated hypothesis tests for survey data",
    )
    parser.add_argument("--version", action="version",
                        version=f"svyboot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="generate bootstrap replicate weights")
    _add_schema(p)
    _add_common(p)
    p.add_argument("--reps", type=int, default=500,
                   help="number of replicate weight sets")
    p.set_defaults(func=_cmd_weights)

    p = sub.add_parser("fit", help="fit a survey-weighted model")
    _add_schema(p)
    _add_common(p)
    p.add_argument("--model", choices=sorted(MODELS), default="gaussian")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("test", help="regression hypothesis tests")
    _add_schema(p)
    _add_common(p)
    p.add_argument("--model", choices=sorted(MODELS), default="gaussian")
    p.add_argument("--null", required=True,
                   help="null hypothesis, e.g. 'x1=1.0' or 'intercept=0,x1=1'")
    p.add_argument("--method", default="all",
                   help="comma list of " + ", ".join(_REGRESSION_METHODS) + ", all")
    p.add_argument("--reps", type=int, default=500,
                   help="bootstrap replicates when the CSV has none")
    p.add_argument("--weights", dest="weights_file", default=None,
                   help="CSV holding the replicate weight columns")
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("gof", help="goodness-of-fit for category proportions")
    _add_schema(p)
    _add_common(p)
    p.add_argument("--expected", required=True, dest="p0",
                   help="null category proportions, e.g. '0.5,0.3,0.2'")
    p.add_argument("--categories", default=None,
                   help="category order (default: first appearance)")
    p.add_argument("--method", default="all",
                   help="comma list of " + ", ".join(_CATEGORICAL_METHODS) + ", all")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--weights", dest="weights_file", default=None,
                   help="CSV holding the replicate weight columns")
    p.set_defaults(func=_cmd_gof)

    p = sub.add_parser("independence", help="two-way table independence tests")
    _add_schema(p)
    _add_common(p)
    p.add_argument("--row", required=True, help="row variable column")
    p.add_argument("--col", required=True, help="column variable column")
    p.add_argument("--method", default="all",
                   help="comma list of " + ", ".join(_CATEGORICAL_METHODS) + ", all")
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--weights", dest="weights_file", default=None,
                   help="CSV holding the replicate weight columns")
    p.set_defaults(func=_cmd_independence)

    p = sub.add_parser("simulate", help="Monte Carlo power studies")
    _add_common(p)
    p.add_argument("--scenario", required=True,
                   choices=("table1", "table2", "table3", "table4"))
    p.add_argument("--mc", type=int, default=500, help="Monte Carlo repetitions")
    p.add_argument("--reps", type=int, default=500, help="bootstrap replicates")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--fixed-population", action="store_true",
                   help="generate the finite population once and reuse it")
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--stratum-sample-size", type=int, default=None)
    p.add_argument("--n-clusters", type=int, default=None)
    p.add_argument("--min-cluster-size", type=int, default=None)
    p.add_argument("--n1", type=int, default=None)
    p.add_argument("--n2", type=int, default=None)
    p.add_argument("--null-values", default=None,
                   help="comma list overriding the scenario's null values")
    p.add_argument("--cases", default=None,
                   help="comma list of table4 cases (I,II,III)")
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"svyboot: error: {exc}", file=sys.stderr)
        return 3
    except (SingularInformationError, DiagnosticError) as exc:
        print(f"svyboot: estimation failed: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
