"""Sequential workload runner, reports, cross-report comparison and sampler traces."""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..cardinality import EstimatorFramework, ProbeCache, q_error
from ..config import EngineConfig
from ..executor import execute
from ..optimizer import explain_json, plan
from ..storage import Catalog
from .templates import QueryInstance

SCHEMA_VERSION = 1
CSV_FIELDS = ["template", "config", "query_index", "latency_ms", "est_card", "true_card", "q_error",
              "sample_size", "plan_hash"]


class ReportError(ValueError):
    pass


class CatalogMismatch(ReportError):
    pass


def trimmed_mean(values: list[float]) -> float:
    """Mean after dropping one minimum and one maximum (plain mean below three values)."""
    if not values:
        raise ValueError("trimmed_mean of an empty sequence")
    if len(values) < 3:
        return sum(values) / len(values)
    vals = sorted(values)[1:-1]
    return sum(vals) / len(vals)


def _index_searches(catalog: Catalog) -> int:
    return sum(ix.search_count for ix in catalog.vector_indexes.values())


def _rows_digest(rows: list[tuple]) -> str:
    h = hashlib.sha256()
    for r in rows:
        h.update(repr(r).encode())
    return h.hexdigest()[:16]


@dataclass
class WorkloadReport:
    manifest_hash: str | None
    configs: dict[str, dict] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)
    trajectories: dict[str, list[dict]] = field(default_factory=dict)
    repetitions: int = 1
    schema_version: int = SCHEMA_VERSION
    tool_version: str = __version__

    def templates(self) -> list[str]:
        return sorted({r["template"] for r in self.records})

    def config_names(self) -> list[str]:
        return list(self.configs)

    def select(self, template: str | None = None, config: str | None = None) -> list[dict]:
        return [r for r in self.records
                if (template is None or r["template"] == template) and (config is None or r["config"] == config)]

    def summary(self) -> dict:
        out: dict = {}
        for t in self.templates():
            for c in self.config_names():
                recs = self.select(t, c)
                if not recs:
                    continue
                lat = [r["latency_ms"] for r in recs]
                out.setdefault(t, {})[c] = {
                    "queries": len(recs),
                    "trimmed_mean_ms": trimmed_mean(lat),
                    "median_q_error": statistics.median(r["q_error"] for r in recs),
                    "mean_planning_ms": statistics.fmean(r["planning_ms"] for r in recs),
                    "mean_estimation_ms": statistics.fmean(r["estimation_ms"] for r in recs),
                    "mean_exec_ms": statistics.fmean(r["exec_ms"] for r in recs),
                }
        return out

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "manifest_hash": self.manifest_hash,
            "repetitions": self.repetitions,
            "configs": self.configs,
            "summary": self.summary(),
            "records": self.records,
            "trajectories": self.trajectories,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
            w.writeheader()
            for r in self.records:
                w.writerow(r)

    @classmethod
    def load(cls, path: str | Path) -> WorkloadReport:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ReportError(f"{path}: cannot read report: {exc}") from None
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ReportError(f"{path}: unsupported report schema {data.get('schema_version')!r}")
        return cls(data["manifest_hash"], data["configs"], data["records"], data.get("trajectories", {}),
                   data.get("repetitions", 1), data["schema_version"], data.get("tool_version", ""))

    def merge(self, other: WorkloadReport) -> WorkloadReport:
        if self.manifest_hash != other.manifest_hash:
            raise CatalogMismatch("reports come from different catalogs")
        self.configs.update(other.configs)
        self.records.extend(other.records)
        self.trajectories.update(other.trajectories)
        return self


def run_workload(catalog: Catalog, queries: list[QueryInstance], configs: list[EngineConfig],
                 repetitions: int = 10, warmup: bool = True, keep_explain: bool = False) -> WorkloadReport:
    """Run every query under every config, strictly in order.

    Each query is planned and executed ``repetitions`` times; the latency is the
    trimmed mean of the end-to-end (plan + execute) times.  Estimator feedback is
    delivered once per query, after the last repetition, so repetitions never
    advance estimator state.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    report = WorkloadReport(catalog.manifest_hash, repetitions=repetitions)
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ValueError(f"config names must be unique, got {names}")
    for cfg in configs:
        report.configs[cfg.name] = cfg.to_json()
        fw = EstimatorFramework(cfg.estimator_config())
        cm = cfg.cost_model()
        if warmup and queries:
            # load compiled kernels and warm caches without touching estimator state
            wfw = EstimatorFramework(cfg.estimator_config())
            execute(plan(queries[0].logical, wfw, catalog, cm), catalog)
        trajectory = []
        seen: dict[str, int] = {}
        for n_run, inst in enumerate(queries):
            qi = seen.get(inst.template, 0)
            seen[inst.template] = qi + 1
            pred = inst.predicate
            state = fw.state(pred.relation, pred.column) if cfg.estimator == "sampling:adaptive" else None
            lr = state.learning_rate if state else None
            lats, plan_ms, exec_ms = [], [], []
            for rep in range(repetitions):
                last = rep == repetitions - 1
                before = _index_searches(catalog)
                t0 = time.perf_counter()
                p = plan(inst.logical, fw, catalog, cm, ProbeCache())
                t1 = time.perf_counter()
                result, stats = execute(p, catalog, fw if last else None)
                t2 = time.perf_counter()
                lats.append((t2 - t0) * 1e3)
                plan_ms.append((t1 - t0) * 1e3)
                exec_ms.append((t2 - t1) * 1e3)
                searches = _index_searches(catalog) - before
            fw.end_query()
            est = p.estimates[pred.key]
            node = next((n for n in p.vector_scan_nodes() if n.vector_predicate.key == pred.key), None)
            observed = node.observed_rows if node is not None else None
            fb = next((f for f in stats.feedback if (f["relation"], f["column"]) == (pred.relation, pred.column)), {})
            rec = {
                "template": inst.template,
                "config": cfg.name,
                "query_index": qi,
                "seed": inst.seed,
                "latency_ms": trimmed_mean(lats),
                "latencies_ms": lats,
                "planning_ms": trimmed_mean(plan_ms),
                "estimation_ms": p.estimation_ms,
                "exec_ms": trimmed_mean(exec_ms),
                "est_card": est.value,
                "true_card": inst.oracle,
                "observed_card": observed,
                "q_error": q_error(est.value, inst.oracle),
                "sample_size": est.sample_size,
                "learning_rate": lr,
                "plan_hash": p.plan_hash,
                "join_order": list(p.join_order),
                "join_methods": sorted([sorted(k) + [v] for k, v in p.join_methods().items()]),
                "scan_methods": p.scan_methods(),
                "index_searches": searches,
                "ann_probe_count": stats.ann_probe_count,
                "vector_scan_est_rows": node.est_rows if node is not None else None,
                "result_rows": len(result),
                "result_digest": _rows_digest(result.rows),
                "threshold": inst.threshold,
            }
            if keep_explain:
                rec["explain"] = explain_json(p)
                rec["exec_stats"] = stats.to_json()
            report.records.append(rec)
            if state is not None:
                trajectory.append({
                    "query_index": n_run,
                    "sample_size": est.sample_size,
                    "q_error": q_error(est.value, observed if observed is not None else inst.oracle),
                    "learning_rate": lr,
                    "updated": bool(fb.get("updated", False)),
                    "next_sample_size": state.sampling_size,
                })
        if trajectory:
            report.trajectories[cfg.name] = trajectory
    return report


# -- comparison ------------------------------------------------------------------------


def classify_plan_change(base: dict, cand: dict) -> list[str]:
    """Kinds of difference between two executed plans (empty when the plans are identical)."""
    if base["plan_hash"] == cand["plan_hash"]:
        return []
    kinds = []
    if base["join_order"] != cand["join_order"]:
        kinds.append("join-order")
    bj = {tuple(x[:-1]): x[-1] for x in base["join_methods"]}
    cj = {tuple(x[:-1]): x[-1] for x in cand["join_methods"]}
    if any(bj[k] != cj[k] for k in bj.keys() & cj.keys()) or sorted(bj.values()) != sorted(cj.values()):
        kinds.append("join-method")
    if base["scan_methods"] != cand["scan_methods"]:
        kinds.append("scan-method")
    return kinds or ["other"]


def compare_reports(reports: list[WorkloadReport], baseline: str | None = None) -> list[dict]:
    """Per-template speedups and plan-change counts of every config against a baseline config."""
    if not reports:
        raise ReportError("nothing to compare")
    hashes = {r.manifest_hash for r in reports}
    if len(hashes) > 1:
        raise CatalogMismatch("reports were produced on different catalogs (manifest hash mismatch)")
    common = set(reports[0].templates())
    for r in reports[1:]:
        common &= set(r.templates())
    if not common:
        raise ReportError("reports share no templates")
    entries = [(r, c) for r in reports for c in r.config_names()]
    base_at = 0
    if baseline is not None:
        found = [i for i, (_, c) in enumerate(entries) if c == baseline]
        if not found:
            raise ReportError(f"baseline config {baseline!r} not present in any report")
        base_at = found[0]
    base_report, base_cfg = entries[base_at]
    others = entries[:base_at] + entries[base_at + 1:] or entries
    rows = []
    for t in sorted(common):
        brecs = {x["query_index"]: x for x in base_report.select(t, base_cfg)}
        b_ms = trimmed_mean([x["latency_ms"] for x in brecs.values()])
        for rep, cfg in others:
            crecs = {x["query_index"]: x for x in rep.select(t, cfg)}
            if not crecs:
                continue
            c_ms = trimmed_mean([x["latency_ms"] for x in crecs.values()])
            if rep is base_report and cfg == base_cfg:
                c_ms = b_ms
            changes: dict[str, int] = {}
            for qi in sorted(brecs.keys() & crecs.keys()):
                for kind in classify_plan_change(brecs[qi], crecs[qi]):
                    changes[kind] = changes.get(kind, 0) + 1
            rows.append({
                "template": t,
                "baseline": base_cfg,
                "candidate": cfg,
                "baseline_ms": b_ms,
                "candidate_ms": c_ms,
                "speedup": b_ms / c_ms if c_ms > 0 else float("inf"),
                "baseline_median_q_error": statistics.median(x["q_error"] for x in brecs.values()),
                "candidate_median_q_error": statistics.median(x["q_error"] for x in crecs.values()),
                "plan_changes": changes,
            })
    return rows


def sampler_trace(report: WorkloadReport, config: str | None = None) -> list[dict]:
    """(query index, sample size, q_error, learning rate) per executed query of an adaptive run."""
    adaptive = [c for c, cj in report.configs.items() if cj["estimator"] == "sampling:adaptive"]
    if config is not None:
        if config not in report.configs:
            raise ReportError(f"config {config!r} not in report")
        if config not in adaptive:
            raise ReportError(f"config {config!r} is {report.configs[config]['estimator']}, not sampling:adaptive")
        adaptive = [config]
    if not adaptive:
        raise ReportError("report contains no sampling:adaptive run")
    return [{"query_index": t["query_index"], "sample_size": t["sample_size"], "q_error": t["q_error"],
             "learning_rate": t["learning_rate"]} for t in report.trajectories.get(adaptive[0], [])]


def make_queries(catalog: Catalog, template: str, n: int, target: int | float, seed: int = 0) -> list[QueryInstance]:
    from .templates import instantiate

    return [instantiate(template, catalog, seed + i, target) for i in range(n)]
