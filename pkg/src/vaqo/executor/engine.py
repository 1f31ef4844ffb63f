"""Pull-based (volcano) execution over bounded row batches.

Batches carry base-relation row ids and materialize columns on demand, so joins
only move integer arrays around.  Every node is wrapped by a timer that counts
emitted rows and inclusive time; exclusive time is derived after the run.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..cardinality import EstimatorFramework
from ..optimizer.physical import (
    Aggregate,
    Filter,
    HashJoin,
    IndexNestedLoopJoin,
    Limit,
    PhysicalPlan,
    PlanNode,
    Project,
    SeqScan,
    Sort,
    VectorIndexScan,
)
from ..predicates import VectorRangePredicate
from ..storage import Catalog
from ..vector_index import DimensionMismatch, l2_distances, range_search

BATCH_SIZE = 1024


class ExecutionError(RuntimeError):
    pass


class Batch:
    __slots__ = ("rowids", "values", "n")

    def __init__(self, rowids: dict[str, np.ndarray], values: dict[str, np.ndarray] | None = None, n: int | None = None):
        self.rowids = rowids
        self.values = values if values is not None else {}
        if n is None:
            src = next(iter(rowids.values()), None)
            if src is None:
                src = next(iter(self.values.values()), None)
            n = 0 if src is None else len(src)
        self.n = n

    def get(self, catalog: Catalog, relation: str, column: str) -> np.ndarray:
        key = f"{relation}.{column}"
        v = self.values.get(key)
        if v is None:
            try:
                rids = self.rowids[relation]
            except KeyError:
                raise ExecutionError(f"column {key} is not available in this batch") from None
            v = catalog[relation].values(column)[rids]
            self.values[key] = v
        return v

    def take(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        return Batch({r: a[idx] for r, a in self.rowids.items()},
                     {k: a[idx] for k, a in self.values.items()}, len(idx))

    def merge(self, other: Batch) -> Batch:
        return Batch({**self.rowids, **other.rowids}, {**self.values, **other.values}, self.n)

    @staticmethod
    def concat(batches: list[Batch]) -> Batch:
        if not batches:
            return Batch({}, {}, 0)
        if len(batches) == 1:
            return batches[0]
        first = batches[0]
        rowids = {r: np.concatenate([b.rowids[r] for b in batches]) for r in first.rowids}
        shared = set(first.values)
        for b in batches[1:]:
            shared &= set(b.values)
        values = {k: np.concatenate([b.values[k] for b in batches]) for k in first.values if k in shared}
        return Batch(rowids, values, sum(b.n for b in batches))

    def chunks(self, size: int = BATCH_SIZE) -> Iterator[Batch]:
        if self.n <= size:
            if self.n:
                yield self
            return
        for s in range(0, self.n, size):
            yield self.take(np.arange(s, min(s + size, self.n)))


@dataclass
class ResultSet:
    columns: list[str]
    rows: list[tuple]

    def __len__(self) -> int:
        return len(self.rows)

    def multiset(self):
        from collections import Counter

        return Counter(self.rows)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            w.writerows(self.rows)


@dataclass
class ExecStats:
    total_ms: float = 0.0
    ann_probe_count: int = 0
    nodes: list[dict] = field(default_factory=list)
    feedback: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"total_ms": self.total_ms, "ann_probe_count": self.ann_probe_count,
                "nodes": self.nodes, "feedback": self.feedback}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


class _Ctx:
    def __init__(self, catalog: Catalog, stats: ExecStats):
        self.catalog = catalog
        self.stats = stats


def _run(node: PlanNode, ctx: _Ctx) -> Iterator[Batch]:
    gen = _OPS[type(node)](node, ctx)
    node.observed_rows = 0
    clock = time.perf_counter
    while True:
        t0 = clock()
        try:
            b = next(gen)
        except StopIteration:
            node.inclusive_ms += (clock() - t0) * 1e3
            node.exhausted = True
            return
        node.inclusive_ms += (clock() - t0) * 1e3
        node.observed_rows += b.n
        yield b


def _mask_scalar(batch: Batch, ctx: _Ctx, preds) -> np.ndarray | None:
    mask = None
    for p in preds:
        m = p.evaluate(batch.get(ctx.catalog, p.relation, p.column))
        mask = m if mask is None else mask & m
    return mask


def _vector_distances(ctx: _Ctx, vecs: np.ndarray, pred: VectorRangePredicate) -> np.ndarray:
    if vecs.shape[1] != pred.query_vector.shape[0]:
        raise DimensionMismatch(f"{pred.relation}.{pred.column} has dim {vecs.shape[1]}, query has {pred.query_vector.shape[0]}")
    return l2_distances(np.ascontiguousarray(vecs), pred.query_vector)


def _seq_scan(node: SeqScan, ctx: _Ctx):
    rel = ctx.catalog[node.relation]
    n_rows = rel.row_count
    vp = node.vector_predicate
    vecs = rel.values(vp.column) if vp is not None else None
    cols = {f.column: rel.values(f.column) for f in node.filters}
    for start in range(0, n_rows, BATCH_SIZE):
        stop = min(start + BATCH_SIZE, n_rows)
        mask = None
        for f in node.filters:
            m = f.evaluate(cols[f.column][start:stop])
            mask = m if mask is None else mask & m
        values = {}
        if vp is not None:
            d = _vector_distances(ctx, vecs[start:stop], vp)
            m = d < vp.threshold
            mask = m if mask is None else mask & m
        if mask is None:
            idx = np.arange(stop - start)
        else:
            idx = np.nonzero(mask)[0]
        if not len(idx):
            continue
        if vp is not None:
            values[f"{node.relation}.{vp.dist_name}"] = d[idx]
        yield Batch({node.relation: idx + start}, values, len(idx))


def _vector_index_scan(node: VectorIndexScan, ctx: _Ctx):
    p = node.vector_predicate
    result = node.cache
    if result is None:
        index = ctx.catalog.vector_index(p.relation, p.column)
        if index is None:
            raise ExecutionError(f"no vector index on {p.relation}.{p.column}")
        result = range_search(index, p.query_vector, p.threshold)
        ctx.stats.ann_probe_count += 1
    ids, ds = result.row_ids, result.distances
    for s in range(0, len(ids), BATCH_SIZE):
        yield Batch({node.relation: ids[s:s + BATCH_SIZE]},
                    {f"{node.relation}.{p.dist_name}": ds[s:s + BATCH_SIZE]})


def _filter(node: Filter, ctx: _Ctx):
    scalar = [p for p in node.predicates if not isinstance(p, VectorRangePredicate)]
    vector = [p for p in node.predicates if isinstance(p, VectorRangePredicate)]
    for b in _run(node.children[0], ctx):
        mask = _mask_scalar(b, ctx, scalar)
        for p in vector:
            vecs = ctx.catalog[p.relation].values(p.column)[b.rowids[p.relation]]
            d = _vector_distances(ctx, vecs, p)
            b.values[f"{p.relation}.{p.dist_name}"] = d
            m = d < p.threshold
            mask = m if mask is None else mask & m
        if mask is None:
            yield b
            continue
        idx = np.nonzero(mask)[0]
        if len(idx):
            yield b.take(idx)


def _keys(batch: Batch, ctx: _Ctx, cols: list[tuple[str, str]]) -> list:
    arrays = [batch.get(ctx.catalog, r, c).tolist() for r, c in cols]
    return arrays[0] if len(arrays) == 1 else list(zip(*arrays))


def _check_key_kinds(ctx: _Ctx, a: list[tuple[str, str]], b: list[tuple[str, str]]) -> None:
    for (ra, ca), (rb, cb) in zip(a, b):
        ka = ctx.catalog[ra].column(ca).kind
        kb = ctx.catalog[rb].column(cb).kind
        numeric = {"int64", "date"}
        if ka != kb and not (ka.name in numeric and kb.name in numeric):
            raise ExecutionError(f"join key type mismatch: {ra}.{ca} is {ka}, {rb}.{cb} is {kb}")


def _probe(table: dict, keys: list) -> tuple[list[int], list[int]]:
    """Positions in ``keys`` and the matching table entries, one pair per match."""
    hits = [table.get(k) for k in keys]
    pos = [i for i, h in enumerate(hits) if h is not None for _ in h]
    matched = [r for h in hits if h is not None for r in h]
    return pos, matched


def _hash_join(node: HashJoin, ctx: _Ctx):
    left, right = node.children
    _check_key_kinds(ctx, node.left_keys, node.right_keys)
    if node.build_side == "left":
        build_child, probe_child, build_keys, probe_keys = left, right, node.left_keys, node.right_keys
    else:
        build_child, probe_child, build_keys, probe_keys = right, left, node.right_keys, node.left_keys
    build = Batch.concat(list(_run(build_child, ctx)))
    if build.n == 0:
        return
    table: dict = {}
    for i, k in enumerate(_keys(build, ctx, build_keys)):
        hit = table.get(k)
        if hit is None:
            table[k] = [i]
        else:
            hit.append(i)
    for pb in _run(probe_child, ctx):
        pi, bi = _probe(table, _keys(pb, ctx, probe_keys))
        if pi:
            yield from pb.take(pi).merge(build.take(bi)).chunks()


def _index_nl_join(node: IndexNestedLoopJoin, ctx: _Ctx):
    perm = sorted(range(len(node.inner_columns)), key=lambda i: node.inner_columns[i])
    outer_keys = [node.outer_keys[i] for i in perm]
    inner_cols = [node.inner_columns[i] for i in perm]
    _check_key_kinds(ctx, outer_keys, [(node.inner, c) for c in inner_cols])
    index = ctx.catalog.key_index(node.inner, inner_cols)
    if index is None:
        raise ExecutionError(f"no key index on {node.inner}({', '.join(inner_cols)})")
    table = index.table
    inner_rel = ctx.catalog[node.inner]
    for ob in _run(node.children[0], ctx):
        pos, rids = _probe(table, _keys(ob, ctx, outer_keys))
        if not pos:
            continue
        rid_arr = np.asarray(rids, dtype=np.int64)
        pos_arr = np.asarray(pos, dtype=np.int64)
        if node.inner_filters:
            mask = None
            for f in node.inner_filters:
                m = f.evaluate(inner_rel.values(f.column)[rid_arr])
                mask = m if mask is None else mask & m
            keep = np.nonzero(mask)[0]
            rid_arr, pos_arr = rid_arr[keep], pos_arr[keep]
            if not len(keep):
                continue
        out = ob.take(pos_arr)
        out.rowids[node.inner] = rid_arr
        yield from out.chunks()


def _getter(batch: Batch, ctx: _Ctx):
    return lambda r, c: batch.get(ctx.catalog, r, c)


def _project(node: Project, ctx: _Ctx):
    for b in _run(node.children[0], ctx):
        get = _getter(b, ctx)
        vals = {}
        for name, expr in node.outputs:
            v = expr.evaluate(get)
            vals[name] = np.broadcast_to(v, (b.n,)) if np.ndim(v) == 0 else v
        yield Batch(b.rowids, vals, b.n)


def _exact_sum(values: list):
    if values and all(isinstance(v, int) for v in values):
        return sum(values)
    return math.fsum(values)


def aggregate_groups(keys: list[tuple], inputs: dict[str, list], specs) -> list[tuple]:
    """Group rows by key and reduce; sums are exactly rounded so row order never matters."""
    groups: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        g = groups.get(k)
        if g is None:
            groups[k] = [i]
        else:
            g.append(i)
    out = []
    for k in sorted(groups):
        idx = groups[k]
        row = list(k)
        for s in specs:
            if s.func == "count":
                row.append(len(idx))
                continue
            vals = [inputs[s.name][i] for i in idx]
            if s.func == "sum":
                row.append(_exact_sum(vals))
            elif s.func == "avg":
                row.append(_exact_sum(vals) / len(vals))
            elif s.func == "min":
                row.append(min(vals))
            elif s.func == "max":
                row.append(max(vals))
            else:
                raise ExecutionError(f"unknown aggregate {s.func!r}")
        out.append(tuple(row))
    return out


def _aggregate(node: Aggregate, ctx: _Ctx):
    b = Batch.concat(list(_run(node.children[0], ctx)))
    names = [n for n, _ in node.group_by] + [s.name for s in node.aggregates]
    if b.n == 0:
        if node.group_by:
            return
        rows = [tuple(0 if s.func == "count" else None for s in node.aggregates)]
    else:
        get = _getter(b, ctx)
        key_cols = [np.broadcast_to(e.evaluate(get), (b.n,)).tolist() for _, e in node.group_by]
        keys = list(zip(*key_cols)) if key_cols else [()] * b.n
        inputs = {}
        for s in node.aggregates:
            if s.expr is not None:
                inputs[s.name] = np.broadcast_to(s.expr.evaluate(get), (b.n,)).tolist()
        rows = aggregate_groups(keys, inputs, node.aggregates)
    cols = list(zip(*rows)) if rows else [()] * len(names)
    values = {}
    for name, col in zip(names, cols):
        arr = np.empty(len(col), dtype=object)
        arr[:] = list(col)
        values[name] = arr
    yield from Batch({}, values, len(rows)).chunks()


def _sort_codes(arr: np.ndarray, desc: bool) -> np.ndarray:
    if arr.dtype == object:
        vals = arr.tolist()
        arr = np.asarray(vals)
        if arr.dtype.kind not in "biuf":
            _, arr = np.unique(np.asarray(vals, dtype=object), return_inverse=True)
    if arr.dtype.kind in "biu":
        arr = arr.astype(np.int64)
    return -arr if desc else arr


def _sort(node: Sort, ctx: _Ctx):
    b = Batch.concat(list(_run(node.children[0], ctx)))
    if b.n == 0:
        return
    keys = [_sort_codes(b.values[name], desc) for name, desc in node.keys]
    if b.rowids:
        ties = [b.rowids[r] for r in sorted(b.rowids)]
    else:
        ties = [_sort_codes(v, False) for v in b.values.values()]
    order = np.lexsort(list(reversed(keys + ties)))
    yield from b.take(order).chunks()


def _limit(node: Limit, ctx: _Ctx):
    left = node.n
    if left <= 0:
        return
    for b in _run(node.children[0], ctx):
        if b.n >= left:
            yield b.take(np.arange(left))
            return
        left -= b.n
        yield b


_OPS = {
    SeqScan: _seq_scan,
    VectorIndexScan: _vector_index_scan,
    Filter: _filter,
    HashJoin: _hash_join,
    IndexNestedLoopJoin: _index_nl_join,
    Project: _project,
    Aggregate: _aggregate,
    Sort: _sort,
    Limit: _limit,
}


def _result(plan: PhysicalPlan, batches: list[Batch]) -> ResultSet:
    names = plan.logical.output_names()
    b = Batch.concat(batches)
    if b.n == 0:
        return ResultSet(names or [f"{r}.rowid" for r in sorted(plan.root.relations())], [])
    if not names:
        rels = sorted(plan.root.relations())
        return ResultSet([f"{r}.rowid" for r in rels],
                         list(zip(*(b.rowids[r].tolist() for r in rels))) if b.n else [])
    cols = [b.values[n].tolist() for n in names]
    return ResultSet(names, list(zip(*cols)) if b.n else [])


def execute(plan: PhysicalPlan, catalog: Catalog,
            feedback: EstimatorFramework | None = None) -> tuple[ResultSet, ExecStats]:
    """Run ``plan``; when ``feedback`` is given, report each vector scan's observed count to it."""
    plan.reset_stats()
    stats = ExecStats()
    ctx = _Ctx(catalog, stats)
    t0 = time.perf_counter()
    batches = list(_run(plan.root, ctx))
    stats.total_ms = (time.perf_counter() - t0) * 1e3
    for node in plan.root.walk():
        child = sum(c.inclusive_ms for c in node.children)
        node.elapsed_ms = max(node.inclusive_ms - child, 0.0)
        if node.observed_rows is None:
            node.observed_rows = 0
        stats.nodes.append({"op": node.op, "detail": node.detail(), "observed_rows": node.observed_rows,
                            "elapsed_ms": node.elapsed_ms})
    result = _result(plan, batches)
    for node in plan.vector_scan_nodes():
        p = node.vector_predicate
        est = plan.estimates.get(p.key)
        if est is None or not node.exhausted:
            continue
        entry = {"relation": p.relation, "column": p.column, "estimated": est.value,
                 "observed": node.observed_rows, "sample_size": est.sample_size}
        if feedback is not None:
            entry["updated"] = feedback.feedback(catalog, p, est.value, node.observed_rows)
        stats.feedback.append(entry)
    return result, stats
