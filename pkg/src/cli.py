from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from typing import Any, Mapping, Sequence

from dotenv import load_dotenv
import numpy as np
import orjson
import polars as pl

from .config import RunConfig, load_config, write_effective_config
from .dataset import Dataset, read_csv, write_csv
from .dependence import (
    EstimatorConfig,
    append_records,
    estimate_coefficient,
    estimate_record,
    group_scan,
)
from .discrete import (
    UNIT as DISCRETE_UNIT,
    XorModel,
    cmi_discrete,
    do_coefficient,
    exact_coefficient,
    information_flow,
    load_model_json,
)
from .errors import (
    BadParams,
    DepmeterError,
    InsufficientSamples,
    MissingInterventionData,
    NoComparableCells,
    SingularBlock,
    SizeCapExceeded,
    UnknownModel,
)
from .gaussian import LinearSem, estimate_covariance, gaussian_cmi
from .health import log_run_context
from .ipm import (
    EmpiricalDistribution,
    KernelSpec,
    mmd_squared,
    sandwich_bounds,
    wasserstein_1d_exact,
    wasserstein_lp,
)
from .logs import configure_logging
from .simgen import (
    InterventionSpec,
    sample_group_model,
    sample_linear_sem,
    sample_nonlinear_system,
    sample_ratio_model,
)
from .structure import (
    learn_skeleton,
    meek_rules,
    orient_v_structures,
    orient_with_interventions,
    summarize,
    write_dot,
    write_edge_list,
)
from .utils import atomic_write_text
from .validation import resolve_columns, split_csv_arg


MODELS = ("linear-sem", "nonlinear-eq12", "group", "ratio")
MODEL_ALIASES = {"nonlinear": "nonlinear-eq12"}
DISCRETE_QUERIES = ("cmi", "flow", "coefficient", "do-coefficient")
DEFAULT_SWEEP_NS = "40,100,200,400,800,1200"
_GROUP_SCHEMA = {
    "stratum": pl.String,
    "n_rows": pl.Int64,
    "coefficient": pl.Float64,
    "tau": pl.Float64,
    "verdict": pl.String,
    "cmi_nats": pl.Float64,
}
_SWEEP_SCHEMA = {"n": pl.Int64, "stratum": pl.String, "coefficient": pl.Float64, "cmi_nats": pl.Float64}


def _print_rows(rows: Sequence[Mapping[str, Any]], columns: list[str]) -> None:
    if not rows:
        print("No results.")
        return
    widths = {col: len(col) for col in columns}
    for row in rows:
        for col in columns:
            widths[col] = max(widths[col], len(_fmt(row[col])))
    header = "  ".join(col.ljust(widths[col]) for col in columns)
    print(header)
    print("-" * len(header))
    for row in rows:
        print("  ".join(_fmt(row[col]).ljust(widths[col]) for col in columns))


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _params(raw: str | None) -> dict[str, Any]:
    if not raw:
        return {}
    try:
        doc = orjson.loads(raw)
    except orjson.JSONDecodeError as exc:
        raise BadParams(f"--params is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadParams("--params must be a JSON object")
    return doc


def _intervention(args: argparse.Namespace) -> InterventionSpec | None:
    clamps = []
    if getattr(args, "do_x3", None):
        clamps.extend(InterventionSpec.x3(args.do_x3 == "natural").clamps)
    for item in getattr(args, "do", None) or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise BadParams(f"--do expects COLUMN=VALUE, got {item!r}")
        try:
            clamps.extend(InterventionSpec.of(**{name.strip(): float(value)}).clamps)
        except ValueError as exc:
            raise BadParams(f"--do value is not a number: {item!r}") from exc
    return InterventionSpec(tuple(clamps)) if clamps else None


def _linear_sem(params: Mapping[str, Any]) -> LinearSem:
    try:
        coefficients = np.asarray(params.get("A", [[0.0, 0.0], [2.0, 0.0]]), dtype=float)
        noise = np.asarray(params.get("noise", np.ones(coefficients.shape[0])), dtype=float)
        names = params.get("names")
        return LinearSem(coefficients, noise, tuple(names) if names else None)
    except (TypeError, ValueError) as exc:
        raise BadParams(f"invalid linear-sem parameters: {exc}") from exc


def _output_dir(config: RunConfig) -> str:
    os.makedirs(config.out, exist_ok=True)
    write_effective_config(config, config.out)
    return config.out


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> Dataset:
    log = logging.getLogger(__name__)
    model = MODEL_ALIASES.get(args.model, args.model)
    if model not in MODELS:
        raise UnknownModel(f"unknown model {args.model!r}; choose from {', '.join(MODELS)}")
    params = _params(args.params)
    intervention = _intervention(args)
    if args.n < 1:
        raise BadParams("--n must be at least 1")
    if intervention is not None and model in ("group", "ratio"):
        raise BadParams(f"model {model} does not accept interventions")
    try:
        if model == "linear-sem":
            ds = sample_linear_sem(_linear_sem(params), args.n, config.seed, intervention)
        elif model == "nonlinear-eq12":
            ds = sample_nonlinear_system(args.n, config.seed, intervention)
        elif model == "group":
            ds = sample_group_model(args.n, config.seed, float(params.get("split", 0.5)))
        else:
            ds = sample_ratio_model(
                args.n, config.seed, int(params.get("m", 3)), params.get("p")
            )
    except (TypeError, ValueError) as exc:
        raise BadParams(f"invalid parameters for {model}: {exc}") from exc
    out_dir = _output_dir(config)
    path = args.output or os.path.join(out_dir, f"{model}.csv")
    write_csv(ds, path)
    log.info("Dataset written: path=%s rows=%s columns=%s", path, ds.n_rows, ds.n_columns)
    print(f"rows={ds.n_rows} columns={ds.n_columns} provenance={ds.provenance.kind} path={path}")
    return ds


def cmd_estimate(args: argparse.Namespace, config: RunConfig) -> dict[str, object]:
    ds = read_csv(args.input)
    i = ds.index_of(args.i)
    j = ds.index_of(args.j)
    K = resolve_columns(ds.columns, split_csv_arg(args.K))
    if i == j or i in K or j in K:
        raise BadParams("--i, --j and --K must name distinct columns")
    est = estimate_coefficient(ds, i, j, K, config=EstimatorConfig.from_run_config(config))
    record = estimate_record(ds, est)
    out_dir = _output_dir(config)
    append_records(os.path.join(out_dir, "estimates.csv"), [record])
    print(f"value={est.value:.6g} tau={est.tau:.6g} verdict={est.verdict}")
    return record


def _stratum_cmi(ds: Dataset, rows: np.ndarray, y: int, x: int) -> float:
    log = logging.getLogger(__name__)
    sub = ds.select_rows(rows)
    try:
        model = estimate_covariance(Dataset(("X", "Y"), sub.values[:, [x, y]]))
        return gaussian_cmi(model, 0, 1)
    except (SingularBlock, InsufficientSamples) as exc:
        log.warning("Stratum CMI unavailable: %s", exc.message)
        return math.nan


def cmd_group_scan(args: argparse.Namespace, config: RunConfig) -> list[dict[str, object]]:
    ds = read_csv(args.input)
    y, x, c = ds.index_of(args.y), ds.index_of(args.x), ds.index_of(args.c)
    scan = group_scan(
        ds, y, x, c, EstimatorConfig.from_run_config(config), strata_bins=args.strata_bins
    )
    rows: list[dict[str, object]] = []
    for item in scan.ranking:
        members = np.flatnonzero(item.stratum.mask(ds.values[:, c]))
        rows.append(
            {
                "stratum": item.stratum.label,
                "n_rows": item.n_rows,
                "coefficient": item.coefficient,
                "tau": item.estimate.tau,
                "verdict": item.estimate.verdict,
                "cmi_nats": _stratum_cmi(ds, members, y, x),
            }
        )
    columns = ["stratum", "n_rows", "coefficient", "tau", "verdict", "cmi_nats"]
    _print_rows(rows, columns)
    print(f"argmax={scan.argmax.label} supremum={scan.supremum:.6g}")
    out_dir = _output_dir(config)
    atomic_write_text(
        os.path.join(out_dir, "group_scan.csv"),
        pl.DataFrame(rows, schema=_GROUP_SCHEMA).write_csv(),
    )
    return rows


def cmd_learn(args: argparse.Namespace, config: RunConfig):
    log = logging.getLogger(__name__)
    ds = read_csv(args.input)
    est_config = EstimatorConfig.from_run_config(config)
    pdag = learn_skeleton(
        ds,
        est_config,
        max_cond_size=config.max_cond_size,
        min_samples=config.min_samples,
    )
    pdag = meek_rules(orient_v_structures(pdag))
    experiments = []
    for path in args.intervention or []:
        exp = read_csv(path)
        spec = InterventionSpec.from_provenance(exp.provenance)
        if not spec.clamps:
            raise MissingInterventionData(f"{path} has no intervention header")
        for clamp in spec.clamps:
            experiments.append((clamp.column, exp))
    if experiments:
        pdag = orient_with_interventions(pdag, experiments, est_config)
    out_dir = _output_dir(config)
    write_dot(pdag, os.path.join(out_dir, "graph.dot"))
    write_edge_list(pdag, os.path.join(out_dir, "edges.csv"))
    counts = summarize(pdag)
    log.info("Graph written: out=%s directed=%s undirected=%s", out_dir, counts["directed"], counts["undirected"])
    _print_rows(pdag.edge_rows(), ["source", "target", "kind", "provenance"])
    return pdag


def _discrete_model(args: argparse.Namespace):
    if args.model in ("xor:a", "xor:b"):
        try:
            return XorModel(args.model[-1], args.xor_b, args.epsilon).build()
        except ValueError as exc:
            raise BadParams(str(exc)) from exc
    return load_model_json(args.model)


def cmd_discrete(args: argparse.Namespace, config: RunConfig) -> float:
    model = _discrete_model(args)
    target = split_csv_arg(args.target)
    source = split_csv_arg(args.source)
    given = split_csv_arg(args.given)
    if not target or not source:
        raise BadParams("--target and --source are required")
    try:
        if args.query == "cmi":
            value, unit = cmi_discrete(model, target, source, given), DISCRETE_UNIT
        elif args.query == "flow":
            value, unit = information_flow(model, source, target, given), DISCRETE_UNIT
        else:
            if len(target) != 1:
                raise BadParams("coefficients need a single --target node")
            fn = exact_coefficient if args.query == "coefficient" else do_coefficient
            value, unit = fn(model, target[0], source, given), "ratio"
    except ValueError as exc:
        raise BadParams(str(exc)) from exc
    print(f"{args.query}={value:.12g} {unit}")
    return value


def cmd_transport(args: argparse.Namespace, config: RunConfig) -> dict[str, object]:
    first = read_csv(args.input)
    second = read_csv(args.input_b) if args.input_b else first
    a = EmpiricalDistribution.from_samples(first.column(args.column_a))
    b = EmpiricalDistribution.from_samples(second.column(args.column_b))
    kernel = (
        KernelSpec.median_heuristic(a, b)
        if config.bandwidth == "median"
        else KernelSpec(float(config.bandwidth))
    )
    try:
        lp_value: float | str = wasserstein_lp(a, b, method=args.lp_method, cap=config.lp_cap)
    except SizeCapExceeded as exc:
        logging.getLogger(__name__).info("LP skipped: %s", exc.message)
        lp_value = "skipped"
    bounds = sandwich_bounds(a, b)
    row = {
        "w1_exact": wasserstein_1d_exact(a, b),
        "w1_lp": lp_value,
        "mmd2": mmd_squared(a, b, kernel),
        "bandwidth": kernel.bandwidth,
        "lower": bounds.lower,
        "upper": bounds.upper,
    }
    _print_rows([row], list(row))
    return row


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> list[dict[str, object]]:
    log = logging.getLogger(__name__)
    try:
        ns = [int(item) for item in split_csv_arg(args.ns)]
    except ValueError as exc:
        raise BadParams(f"--ns must be a comma-separated list of integers: {args.ns!r}") from exc
    if not ns or min(ns) < 1:
        raise BadParams("--ns needs positive sample sizes")
    est_config = EstimatorConfig.from_run_config(config)
    rows: list[dict[str, object]] = []
    for n in ns:
        ds = sample_group_model(n, config.seed, args.split)
        c = ds.index_of("C")
        for code, label in enumerate(ds.labels["C"]):
            members = np.flatnonzero(ds.values[:, c] == code)
            coefficient = math.nan
            if members.size:
                try:
                    sub = ds.select_rows(members)
                    coefficient = estimate_coefficient(sub, "Y", "X", (), config=est_config).value
                except (NoComparableCells, InsufficientSamples) as exc:
                    log.info("Sweep point skipped: n=%s stratum=%s reason=%s", n, label, exc.code)
            rows.append(
                {
                    "n": n,
                    "stratum": label,
                    "coefficient": coefficient,
                    "cmi_nats": _stratum_cmi(ds, members, ds.index_of("Y"), ds.index_of("X"))
                    if members.size
                    else math.nan,
                }
            )
    _print_rows(rows, ["n", "stratum", "coefficient", "cmi_nats"])
    out_dir = _output_dir(config)
    frame = pl.DataFrame(rows, schema=_SWEEP_SCHEMA)
    atomic_write_text(os.path.join(out_dir, "sweep.csv"), frame.write_csv())
    return rows


_GLOBAL_OPTIONS = (
    "config",
    "seed",
    "estimator",
    "bins",
    "cond_bins",
    "min_occupancy",
    "threshold_c0",
    "alpha",
    "adjustment",
    "bandwidth",
    "max_cond_size",
    "aggregation",
    "representative",
    "workers",
    "out",
    "log_level",
)


def _global_options(default: Any) -> argparse.ArgumentParser:
    """Run options shared by the top-level parser and every subcommand.

    Subcommands use ``argparse.SUPPRESS`` so a flag given before the subcommand
    is not reset when the subcommand parser fills in its own defaults.
    """
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument("--config", default=default, help="JSON config file (default: $DEPMETER_CONFIG)")
    options.add_argument("--seed", type=int, default=default)
    options.add_argument("--estimator", choices=["wasserstein", "mmd"], default=default)
    options.add_argument("--bins", type=int, default=default, help="Bins for the target variable")
    options.add_argument(
        "--cond-bins", default=default, help="Bins per conditioning variable, or 'auto' to grow with N"
    )
    options.add_argument("--min-occupancy", type=int, default=default)
    options.add_argument("--threshold-c0", type=float, default=default, help="Offset added to the normal quantile")
    options.add_argument("--alpha", type=float, default=default, help="Level of the max-over-pairs threshold")
    options.add_argument("--adjustment", choices=["location-scale", "location", "none"], default=default)
    options.add_argument("--bandwidth", default=default, help="Kernel bandwidth or 'median'")
    options.add_argument("--max-cond-size", type=int, default=default)
    options.add_argument("--aggregation", choices=["max", "quantile"], default=default)
    options.add_argument("--representative", choices=["mean", "median"], default=default)
    options.add_argument("--workers", type=int, default=default)
    options.add_argument("--out", default=default, help="Output directory")
    options.add_argument("--log-level", default=default)
    return options


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Conditional dependence measurement CLI", parents=[_global_options(None)]
    )
    shared = [_global_options(argparse.SUPPRESS)]

    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=shared, help="Generate a synthetic dataset")
    simulate.add_argument("model", help=f"One of: {', '.join(MODELS)} (alias: nonlinear)")
    simulate.add_argument("--n", type=int, default=1000)
    simulate.add_argument("--params", help="Model parameters as a JSON object")
    simulate.add_argument("--do-x3", choices=["natural", "non-natural"])
    simulate.add_argument("--do", action="append", help="Clamp COLUMN=VALUE (repeatable)")
    simulate.add_argument("--output", help="CSV path (default: <out>/<model>.csv)")

    estimate = sub.add_parser("estimate", parents=shared, help="Estimate the coefficient of i on j given K")
    estimate.add_argument("input")
    estimate.add_argument("--i", required=True)
    estimate.add_argument("--j", required=True)
    estimate.add_argument("--K", default="", help="Comma-separated conditioning columns")

    scan = sub.add_parser("group-scan", parents=shared, help="Rank strata of c by the coefficient of y on x")
    scan.add_argument("input")
    scan.add_argument("--y", required=True)
    scan.add_argument("--x", required=True)
    scan.add_argument("--c", required=True)
    scan.add_argument("--strata-bins", type=int, default=4)

    learn = sub.add_parser("learn", parents=shared, help="Learn a partially directed graph")
    learn.add_argument("input", help="Observational CSV")
    learn.add_argument("--intervention", action="append", help="Interventional CSV (repeatable)")

    discrete = sub.add_parser("discrete", parents=shared, help="Exact queries on a discrete model")
    discrete.add_argument("model", help="Model JSON path, or xor:a / xor:b")
    discrete.add_argument("query", choices=DISCRETE_QUERIES)
    discrete.add_argument("--target", required=True, help="i (or B for flow)")
    discrete.add_argument("--source", required=True, help="j (or A for flow)")
    discrete.add_argument("--given", default="", help="K, comma-separated")
    discrete.add_argument("--xor-b", type=float, default=0.5)
    discrete.add_argument("--epsilon", type=float, default=0.1)

    transport = sub.add_parser("transport", parents=shared, help="Distances between two CSV columns")
    transport.add_argument("input")
    transport.add_argument("--column-a", required=True)
    transport.add_argument("--column-b", required=True)
    transport.add_argument("--input-b", help="Second CSV (default: same file)")
    transport.add_argument("--lp-method", choices=["network-simplex", "dual-lp"], default="network-simplex")

    sweep = sub.add_parser("sweep", parents=shared, help="Group-model measures over sample sizes")
    sweep.add_argument("--ns", default=DEFAULT_SWEEP_NS)
    sweep.add_argument("--split", type=float, default=0.5)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {name: getattr(args, name, None) for name in _GLOBAL_OPTIONS if name != "config"}


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(getattr(args, "config", None), _overrides(args))
    except DepmeterError as exc:
        print(f"error: {exc.one_line()}", file=sys.stderr)
        return 2
    configure_logging(config.log_level, config.log_dir, config.log_retention_hours)
    log = logging.getLogger(__name__)
    log_run_context(config, args.command)
    try:
        if args.command == "simulate":
            cmd_simulate(args, config)
        elif args.command == "estimate":
            cmd_estimate(args, config)
        elif args.command == "group-scan":
            cmd_group_scan(args, config)
        elif args.command == "learn":
            cmd_learn(args, config)
        elif args.command == "discrete":
            cmd_discrete(args, config)
        elif args.command == "transport":
            cmd_transport(args, config)
        elif args.command == "sweep":
            cmd_sweep(args, config)
    except DepmeterError as exc:
        log.debug("Command failed: %s", exc.one_line())
        print(f"error: {exc.one_line()}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("Command crashed: command=%s", args.command)
        print(f"error: INTERNAL: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
