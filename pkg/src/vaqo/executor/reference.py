"""Row-at-a-time reference interpreter used as a correctness oracle.

It never touches a vector index, a key index or the planner: every vector
predicate is an exact distance comparison, and joins are nested loops over
pre-filtered row lists.  Only meant for small catalogs.
"""

from __future__ import annotations

import math

import numpy as np

from ..optimizer.logical import LogicalPlan
from ..storage import Catalog
from ..vector_index import l2_distances
from .engine import ResultSet


def _rows_passing(catalog: Catalog, logical: LogicalPlan, relation: str) -> tuple[list[int], dict]:
    scan = logical.scan(relation)
    rel = catalog[relation]
    cols = {f.column: rel.values(f.column).tolist() for f in scan.filters}
    dists = {}
    for p in scan.vector_predicates:
        vecs = rel.values(p.column)
        dists[p.dist_name] = [float(l2_distances(vecs[i:i + 1], p.query_vector)[0]) for i in range(rel.row_count)]
    keep = []
    for i in range(rel.row_count):
        if all(f.holds(cols[f.column][i]) for f in scan.filters) and \
                all(dists[p.dist_name][i] < p.threshold for p in scan.vector_predicates):
            keep.append(i)
    return keep, dists


def _join_order(logical: LogicalPlan) -> list[str]:
    order = [logical.relations[0]]
    while len(order) < len(logical.relations):
        for e in logical.joins:
            if e.left in order and e.right not in order:
                order.append(e.right)
                break
            if e.right in order and e.left not in order:
                order.append(e.left)
                break
        else:
            raise ValueError("join graph is not connected")
    return order


def _sum(vals: list):
    if vals and all(isinstance(v, int) for v in vals):
        return sum(vals)
    return math.fsum(vals)


def run_reference(logical: LogicalPlan, catalog: Catalog) -> ResultSet:
    order = _join_order(logical)
    candidates = {}
    dists = {}
    for r in order:
        candidates[r], dists[r] = _rows_passing(catalog, logical, r)
    column_cache: dict[tuple[str, str], list] = {}

    def col(r: str, c: str) -> list:
        key = (r, c)
        if key not in column_cache:
            column_cache[key] = dists[r][c] if c.startswith("__dist__.") else catalog[r].values(c).tolist()
        return column_cache[key]

    bindings: list[dict[str, int]] = [{}]
    for r in order:
        edges = [e for e in logical.joins if r in (e.left, e.right) and e.other(r) in bindings[0]] if bindings else []
        nxt = []
        for b in bindings:
            for rid in candidates[r]:
                ok = True
                for e in edges:
                    o = e.other(r)
                    for ca, cb in zip(e.columns_for(r), e.columns_for(o)):
                        if col(r, ca)[rid] != col(o, cb)[b[o]]:
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    nxt.append({**b, r: rid})
        bindings = nxt

    def getter(b):
        return lambda r, c: col(r, c)[b[r]]

    if logical.aggregate is not None:
        agg = logical.aggregate
        groups: dict[tuple, list[dict]] = {}
        for b in bindings:
            g = getter(b)
            key = tuple(_py(e.row(g)) for _, e in agg.group_by)
            groups.setdefault(key, []).append(b)
        if not agg.group_by and not groups:
            groups[()] = []
        rows = []
        for key, members in groups.items():
            row = list(key)
            for s in agg.aggregates:
                if s.func == "count":
                    row.append(len(members))
                    continue
                vals = [_py(s.expr.row(getter(b))) for b in members]
                if not vals:
                    row.append(None)
                elif s.func == "sum":
                    row.append(_sum(vals))
                elif s.func == "avg":
                    row.append(_sum(vals) / len(vals))
                elif s.func == "min":
                    row.append(min(vals))
                else:
                    row.append(max(vals))
            rows.append(tuple(row))
        names = agg.output_names()
        tie = [lambda row, i=i: row[i] for i in range(len(names))]
    else:
        names = logical.output_names()
        rels = sorted(order)
        if logical.project is None:
            names = [f"{r}.rowid" for r in rels]
            rows = [tuple(b[r] for r in rels) for b in bindings]
            tie = []
        else:
            rows = []
            ids = []
            for b in bindings:
                g = getter(b)
                rows.append(tuple(_py(e.row(g)) for _, e in logical.project))
                ids.append(tuple(b[r] for r in rels))
            paired = list(zip(rows, ids))
            paired = _ordered(paired, names, logical.order_by, lambda item: item[1])
            rows = [p[0] for p in paired]
            if logical.limit is not None:
                rows = rows[:logical.limit]
            return ResultSet(names, rows)

    rows = _ordered([(r, r) for r in rows], names, logical.order_by,
                    lambda item: tuple(t(item[1]) for t in tie))
    rows = [r for r, _ in rows]
    if logical.limit is not None:
        rows = rows[:logical.limit]
    return ResultSet(names, rows)


class _Desc:
    __slots__ = ("v",)

    def __init__(self, v):
        self.v = v

    def __lt__(self, other):
        return other.v < self.v

    def __eq__(self, other):
        return self.v == other.v


def _ordered(items: list, names: list[str], order_by, tie_key) -> list:
    if not order_by:
        return sorted(items, key=tie_key) if items and order_by else items
    pos = {n: i for i, n in enumerate(names)}

    def key(item):
        row = item[0]
        parts = tuple(_Desc(row[pos[n]]) if desc else row[pos[n]] for n, desc in order_by)
        return parts + (tie_key(item),)

    return sorted(items, key=key)


def _py(v):
    return v.item() if isinstance(v, np.generic) else v
