"""Batch command line: gen, index, run, compare, trace-sampler, report.

Every option can also be supplied through an environment variable named
``VAQO_<OPTION>`` (upper case, dashes as underscores), e.g. ``VAQO_SEED=7``.
Command-line flags win over the environment.

Exit codes: 0 success, 2 usage error, 3 data or configuration error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .benchmark import (
    DISTRIBUTIONS,
    TEMPLATES,
    BenchmarkSpec,
    ReportError,
    WorkloadReport,
    compare_reports,
    export_catalog,
    generate,
    import_catalog,
    make_queries,
    run_workload,
    sampler_trace,
)
from .cardinality import ESTIMATORS, AdaptiveHyperparams, SamplingParams
from .config import EngineConfig
from .optimizer.cost import COST_PROFILES
from .optimizer.planner import PlanningError
from .storage import Catalog, LoadError, SchemaError
from .vector_index import HnswParams, build_index, load_index, save_index

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4
ENV_PREFIX = "VAQO_"
DEFAULT_INDEX_COLUMNS = ("partsupp.ps_image_embedding", "part.p_text_embedding")


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _target(text: str) -> int | float:
    """Match count (integer) or selectivity (fraction below 1, or a percentage like '1%')."""
    text = text.strip()
    if text.endswith("%"):
        v = float(text[:-1]) / 100
    elif "." in text or "e" in text.lower():
        v = float(text)
    else:
        k = int(text)
        if k < 1:
            raise argparse.ArgumentTypeError("match count must be >= 1")
        return k
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"selectivity must be in (0, 1], got {text}")
    return v


def _templates(text: str) -> list[str]:
    ids = [t.strip().lower() for t in text.split(",") if t.strip()]
    bad = [t for t in ids if t not in TEMPLATES]
    if bad or not ids:
        raise argparse.ArgumentTypeError(f"unknown template id(s) {bad}; valid ids: {', '.join(TEMPLATES)}")
    return ids


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    hd, sd, ad = HnswParams(), SamplingParams(), AdaptiveHyperparams()
    p.add_argument("--estimator", action="append", choices=ESTIMATORS,
                   help="estimator config to run; repeat for several (default heuristic:pgvector)")
    p.add_argument("--cost-profile", default="default", choices=sorted(COST_PROFILES))
    p.add_argument("--ef-search", type=_positive_int, default=hd.ef_search)
    p.add_argument("--z", type=_positive_float, default=sd.z, help="confidence z-score for the sample size")
    p.add_argument("--p-hat", type=float, default=sd.p_hat)
    p.add_argument("--margin", type=float, default=sd.e, help="margin of error e")
    p.add_argument("--momentum", type=float, default=ad.m)
    p.add_argument("--eta0", type=float, default=ad.eta0)
    p.add_argument("--alpha", type=float, default=ad.alpha)
    p.add_argument("--beta", type=float, default=ad.beta)
    p.add_argument("--gamma", type=float, default=ad.gamma)
    p.add_argument("--cadence", type=_positive_int, default=ad.cadence)
    p.add_argument("--ratio-scale", choices=("fraction", "percent"), default=ad.ratio_scale)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vaqo", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"vaqo {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic catalog (CSV + fvecs + manifest)")
    g.add_argument("--sf", type=_positive_float, default=0.01, help="scale factor (> 0)")
    g.add_argument("--dist", choices=DISTRIBUTIONS, default="gaussian-clustered")
    g.add_argument("--dim", type=_positive_int, default=96, help="image embedding dimension")
    g.add_argument("--text-dim", type=_positive_int, default=32, help="text embedding dimension")
    g.add_argument("--clusters", type=_positive_int, default=8)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("-o", "--out", required=True, help="output directory")

    i = sub.add_parser("index", help="build HNSW indexes over vector columns of a catalog")
    i.add_argument("catalog", help="catalog directory written by gen")
    i.add_argument("--column", action="append", help="relation.column; repeatable "
                   f"(default {', '.join(DEFAULT_INDEX_COLUMNS)})")
    hd = HnswParams()
    i.add_argument("--m", type=_positive_int, default=hd.M)
    i.add_argument("--ef-construction", type=_positive_int, default=hd.ef_construction)
    i.add_argument("--ef-search", type=_positive_int, default=hd.ef_search)
    i.add_argument("--seed", type=int, default=hd.seed)

    r = sub.add_parser("run", help="run a workload and write report JSON/CSV plus explain trees")
    r.add_argument("catalog")
    r.add_argument("--templates", type=_templates, default=["q3"], help="comma-separated template ids")
    r.add_argument("--queries", type=_positive_int, default=1, help="query instances per template")
    r.add_argument("--target", type=_target, default=200, help="match count K, or selectivity like 0.01 or 1%%")
    r.add_argument("--reps", type=_positive_int, default=10, help="repetitions per query (trimmed mean)")
    r.add_argument("--seed", type=int, default=0, help="query and sampling seed")
    r.add_argument("--no-index", action="store_true", help="ignore vector indexes present in the catalog")
    r.add_argument("-o", "--out", required=True, help="output directory")
    _add_engine_flags(r)

    c = sub.add_parser("compare", help="speedups, Q-error and plan changes across reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--baseline", help="config name used as the baseline (default: first config)")
    c.add_argument("-o", "--out", help="write the comparison as CSV")

    t = sub.add_parser("trace-sampler", help="sample-size trajectory of an adaptive run as CSV")
    t.add_argument("report")
    t.add_argument("--config", help="adaptive config name inside the report")
    t.add_argument("-o", "--out", help="CSV path (default stdout)")

    rp = sub.add_parser("report", help="summary CSV and PNG figures from one or more reports")
    rp.add_argument("reports", nargs="+")
    rp.add_argument("-o", "--out", required=True, help="output directory")
    return ap


def _apply_env(parser: argparse.ArgumentParser, argv: list[str], environ) -> None:
    """Use VAQO_<DEST> environment values as defaults for every option of the chosen command."""
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd = next((a for a in argv if a in subparsers.choices), None)
    targets = [parser] + ([subparsers.choices[cmd]] if cmd else [])
    for p in targets:
        for action in p._actions:
            if not action.option_strings or action.dest in ("help", "version"):
                continue
            key = ENV_PREFIX + action.dest.upper()
            if key not in environ:
                continue
            raw = environ[key]
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(action, argparse._AppendAction):
                    value = [(action.type or str)(x.strip()) for x in raw.split(",") if x.strip()]
                else:
                    value = (action.type or str)(raw)
                if action.choices is not None:
                    vals = value if isinstance(value, list) else [value]
                    for v in vals:
                        if v not in action.choices:
                            raise argparse.ArgumentTypeError(f"{v!r} not in {list(action.choices)}")
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{key}={raw!r}: {exc}") from None
            action.default = value
            if action.required:
                action.required = False


# -- commands ----------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = BenchmarkSpec(args.sf, args.dim, args.text_dim, args.dist, args.clusters, seed=args.seed)
    cat = generate(spec)
    manifest = export_catalog(cat, args.out, spec)
    print(json.dumps({"out": str(args.out), "manifest_hash": manifest["manifest_hash"],
                      "tables": {t["name"]: t["rows"] for t in manifest["tables"]}}, indent=2))
    return EXIT_OK


def _index_path(directory: Path, rel: str, col: str) -> Path:
    return directory / f"{rel}.{col}.hnsw"


def _split_column(text: str) -> tuple[str, str]:
    if "." not in text:
        raise UsageError(f"--column expects relation.column, got {text!r}")
    rel, col = text.split(".", 1)
    return rel, col


def cmd_index(args) -> int:
    directory = Path(args.catalog)
    cat = import_catalog(directory)
    params = HnswParams(args.m, args.ef_construction, args.ef_search, args.seed)
    out = {}
    for spec in args.column or DEFAULT_INDEX_COLUMNS:
        rel, col = _split_column(spec)
        t0 = time.perf_counter()
        idx = build_index(cat[rel], col, params)
        save_index(idx, _index_path(directory, rel, col))
        out[spec] = {"rows": len(idx), "build_s": round(time.perf_counter() - t0, 3)}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def load_catalog_with_indexes(directory: str | Path, use_indexes: bool = True) -> Catalog:
    directory = Path(directory)
    cat = import_catalog(directory)
    if use_indexes:
        for f in sorted(directory.glob("*.hnsw")):
            rel, col = f.name[: -len(".hnsw")].split(".", 1)
            if rel in cat:
                cat.vector_indexes[(rel, col)] = load_index(f, cat[rel], col)
    return cat


def _engine_configs(args) -> list[EngineConfig]:
    sampling = SamplingParams(args.z, args.p_hat, args.margin)
    adaptive = AdaptiveHyperparams(args.momentum, args.eta0, args.alpha, args.beta, args.gamma, args.cadence,
                                   args.ratio_scale)
    out = []
    for est in args.estimator or ["heuristic:pgvector"]:
        hnsw = HnswParams(ef_search=args.ef_search) if est == "ecqo" else None
        out.append(EngineConfig(est, hnsw, sampling, adaptive, args.cost_profile, args.seed))
    return out


def _check_invariants(report: WorkloadReport) -> None:
    for r in report.records:
        if report.configs[r["config"]]["estimator"] == "ecqo":
            if r["ann_probe_count"] != 0 or r["index_searches"] != 1:
                raise InvariantViolation(
                    f"{r['template']}#{r['query_index']}: index probed {r['index_searches']} times "
                    f"({r['ann_probe_count']} during execution) under ecqo")


def cmd_run(args) -> int:
    cat = load_catalog_with_indexes(args.catalog, not args.no_index)
    configs = _engine_configs(args)
    for cfg in configs:
        if cfg.estimator == "ecqo":
            for t in args.templates:
                tpl = TEMPLATES[t]
                if cat.vector_index(tpl.vector_relation, tpl.vector_column) is None:
                    raise PlanningError(
                        f"estimator ecqo needs an index on {tpl.vector_relation}.{tpl.vector_column}; "
                        f"run `vaqo index {args.catalog} --column {tpl.vector_relation}.{tpl.vector_column}` first")
    queries = []
    for t in args.templates:
        queries.extend(make_queries(cat, t, args.queries, args.target, seed=args.seed))
    report = run_workload(cat, queries, configs, repetitions=args.reps, keep_explain=True)
    _check_invariants(report)
    out = Path(args.out)
    (out / "explain").mkdir(parents=True, exist_ok=True)
    for rec in report.records:
        stem = f"{rec['template']}-{rec['query_index']:03d}-{rec['config'].replace(':', '_')}"
        (out / "explain" / f"{stem}.json").write_text(
            json.dumps({"plan": rec.pop("explain"), "exec_stats": rec.pop("exec_stats")}, indent=2))
    report.save(out / "report.json")
    report.save_csv(out / "report.csv")
    print(json.dumps(report.summary(), indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = [WorkloadReport.load(p) for p in args.reports]
    rows = compare_reports(reports, args.baseline)
    header = f"{'template':<8} {'baseline':<20} {'candidate':<20} {'base ms':>9} {'cand ms':>9} {'speedup':>8} " \
             f"{'q(base)':>8} {'q(cand)':>8}  plan changes"
    print(header)
    for r in rows:
        ch = ", ".join(f"{k}:{v}" for k, v in sorted(r["plan_changes"].items())) or "none"
        print(f"{r['template']:<8} {r['baseline']:<20} {r['candidate']:<20} {r['baseline_ms']:>9.3f} "
              f"{r['candidate_ms']:>9.3f} {r['speedup']:>8.2f} {r['baseline_median_q_error']:>8.3f} "
              f"{r['candidate_median_q_error']:>8.3f}  {ch}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["template", "baseline", "candidate", "baseline_ms", "candidate_ms", "speedup",
                        "baseline_median_q_error", "candidate_median_q_error", "join_order_changes",
                        "join_method_changes", "scan_method_changes"])
            for r in rows:
                pc = r["plan_changes"]
                w.writerow([r["template"], r["baseline"], r["candidate"], r["baseline_ms"], r["candidate_ms"],
                            r["speedup"], r["baseline_median_q_error"], r["candidate_median_q_error"],
                            pc.get("join-order", 0), pc.get("join-method", 0), pc.get("scan-method", 0)])
    return EXIT_OK


def _write_trace(rows: list[dict], fh) -> None:
    w = csv.writer(fh)
    w.writerow(["query_index", "sample_size", "q_error", "learning_rate"])
    for t in rows:
        w.writerow([t["query_index"], t["sample_size"], t["q_error"], t["learning_rate"]])


def cmd_trace_sampler(args) -> int:
    rows = sampler_trace(WorkloadReport.load(args.report), args.config)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            _write_trace(rows, fh)
    else:
        _write_trace(rows, sys.stdout)
    return EXIT_OK


def cmd_report(args) -> int:
    from .benchmark.plots import plot_latency, plot_q_error, plot_trajectory

    reports = [WorkloadReport.load(p) for p in args.reports]
    merged = reports[0]
    for r in reports[1:]:
        merged.merge(r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = merged.summary()
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["template", "config", "queries", "trimmed_mean_ms", "median_q_error",
                    "mean_planning_ms", "mean_estimation_ms", "mean_exec_ms"])
        for t, per in summary.items():
            for c, s in per.items():
                w.writerow([t, c, s["queries"], s["trimmed_mean_ms"], s["median_q_error"],
                            s["mean_planning_ms"], s["mean_estimation_ms"], s["mean_exec_ms"]])
    files = ["summary.csv", plot_latency(merged, out / "latency.png").name,
             plot_q_error(merged, out / "q_error.png").name]
    for name, traj in merged.trajectories.items():
        trace = sampler_trace(merged, name)
        stem = f"sampler_{name.replace(':', '_')}"
        with (out / f"{stem}.csv").open("w", newline="") as fh:
            _write_trace(trace, fh)
        files += [f"{stem}.csv", plot_trajectory(trace, out / f"{stem}.png", name).name]
    print(json.dumps({"out": str(out), "files": files}, indent=2))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "index": cmd_index,
    "run": cmd_run,
    "compare": cmd_compare,
    "trace-sampler": cmd_trace_sampler,
    "report": cmd_report,
}


def main(argv: list[str] | None = None, environ=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        _apply_env(parser, argv, environ)
    except UsageError as exc:
        print(f"vaqo: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vaqo: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"vaqo: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (LoadError, SchemaError, PlanningError, ReportError, OSError, KeyError, ValueError) as exc:
        print(f"vaqo: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
