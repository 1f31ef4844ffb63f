"""Cost-based planner: access-path choice, left-deep join ordering and join-method selection.

Vector-predicate cardinalities come from the configured :class:`EstimatorFramework`;
scalar filters use uniform-distribution defaults (1/NDV for equality, min/max
interpolation for ranges).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterator

from ..cardinality import CardinalityEstimate, EstimatorFramework, ProbeCache
from ..predicates import Col, Dist, Expr, Predicate
from ..storage import Catalog, SchemaError
from .cost import CostModel
from .logical import DisconnectedJoinGraph, JoinEdge, LogicalPlan, is_connected
from .physical import (
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

EXHAUSTIVE_LIMIT = 8
_STRING_RANGE_SELECTIVITY = 1.0 / 3.0
_REL_TOL = 1e-12


class PlanningError(ValueError):
    pass


# -- scalar selectivity -------------------------------------------------------------


def scalar_selectivity(catalog: Catalog, pred: Predicate) -> float:
    st = catalog.stats(pred.relation, [pred.column])
    ndv = max(st.ndv, 1)
    if pred.op == "=":
        return 1.0 / ndv
    if pred.op == "!=":
        return 1.0 - 1.0 / ndv
    if pred.op == "in":
        return min(1.0, len(pred.value) / ndv)
    if st.min is None or st.max is None:
        return _STRING_RANGE_SELECTIVITY
    lo, hi = st.min, st.max
    span = hi - lo
    if span <= 0:
        return 1.0 if pred.holds(lo) else 0.0

    def frac_below(v):
        return min(max((v - lo) / span, 0.0), 1.0)

    if pred.op in ("<", "<="):
        return frac_below(pred.value)
    if pred.op in (">", ">="):
        return 1.0 - frac_below(pred.value)
    a, b = pred.value
    return max(frac_below(b) - frac_below(a), 0.0)


# -- planning context ---------------------------------------------------------------


@dataclass
class _Access:
    node: PlanNode
    rows: float
    cost: float


@dataclass
class _RelInfo:
    relation: str
    total_rows: int
    rows: float
    accesses: list[_Access]
    has_vector: bool


@dataclass
class _Partial:
    node: PlanNode
    rows: float
    cost: float
    order: tuple[str, ...]


@dataclass
class PlanContext:
    logical: LogicalPlan
    catalog: Catalog
    cost_model: CostModel
    estimates: dict[tuple, CardinalityEstimate] = field(default_factory=dict)
    rels: dict[str, _RelInfo] = field(default_factory=dict)
    estimation_ms: float = 0.0
    probes: int = 0


def _check_columns(logical: LogicalPlan, catalog: Catalog) -> None:
    for s in logical.scans:
        if s.relation not in catalog:
            raise SchemaError(f"unknown relation {s.relation!r}")
        rel = catalog[s.relation]
        for f in s.filters:
            rel.column(f.column)
        for p in s.vector_predicates:
            col = rel.column(p.column)
            if not col.kind.is_vector or col.kind.dim != p.query_vector.shape[0]:
                raise SchemaError(f"vector predicate {p} does not match column kind {col.kind}")
    for e in logical.joins:
        for c in e.left_columns:
            catalog[e.left].column(c)
        for c in e.right_columns:
            catalog[e.right].column(c)


def _dim(catalog: Catalog, relation: str, column: str) -> int:
    return catalog[relation].column(column).kind.dim


def prepare(logical: LogicalPlan, estimators: EstimatorFramework, catalog: Catalog,
            cost_model: CostModel | None = None, session: ProbeCache | None = None) -> PlanContext:
    """Validate the query, obtain vector-predicate estimates and build every base access path."""
    logical.validate()
    _check_columns(logical, catalog)
    cm = cost_model or CostModel()
    session = session if session is not None else ProbeCache()
    ctx = PlanContext(logical, catalog, cm)
    before = session.probes
    for p in logical.vector_predicates():
        if p.key in ctx.estimates:
            continue
        if estimators.kind == "ecqo" and catalog.vector_index(p.relation, p.column) is None:
            raise PlanningError(f"ECQO requested but {p.relation}.{p.column} has no vector index")
        est = estimators.estimate(catalog, p, session)
        ctx.estimates[p.key] = est
        ctx.estimation_ms += est.planning_cost_ms
    ctx.probes = session.probes - before
    ef = estimators.config.hnsw.ef_search if estimators.config.hnsw else 400
    for s in logical.scans:
        ctx.rels[s.relation] = _access_paths(ctx, s, ef)
    return ctx


def _access_paths(ctx: PlanContext, scan, ef_search: int) -> _RelInfo:
    cat, cm = ctx.catalog, ctx.cost_model
    total = cat[scan.relation].row_count
    sel = 1.0
    for f in scan.filters:
        sel *= scalar_selectivity(cat, f)
    vec_rows = {p.key: float(ctx.estimates[p.key].value) for p in scan.vector_predicates}
    rows = total * sel
    for p in scan.vector_predicates:
        rows *= (vec_rows[p.key] / total) if total else 0.0
    if not scan.vector_predicates:
        node = SeqScan(scan.relation, scan.filters)
        node.est_rows = rows
        node.est_cost = cm.seq_scan(total)
        return _RelInfo(scan.relation, total, rows, [_Access(node, rows, node.est_cost)], False)

    accesses = []
    preds = scan.vector_predicates
    # seq scan evaluates the most selective predicate in-scan, the rest in a Filter
    primary = min(preds, key=lambda p: (vec_rows[p.key], preds.index(p)))
    candidates: list[tuple[PlanNode, object]] = [(SeqScan(scan.relation, [], primary), primary)]
    for p in preds:
        idx = cat.vector_index(p.relation, p.column)
        if idx is not None:
            est = ctx.estimates[p.key]
            candidates.append((VectorIndexScan(scan.relation, p, est.cache), p))
    for node, p in candidates:
        dim = _dim(cat, scan.relation, p.column)
        node.est_rows = vec_rows[p.key]
        if isinstance(node, SeqScan):
            node.est_cost = cm.seq_scan(total, dim)
        else:
            idx = cat.vector_index(p.relation, p.column)
            node.est_cost = cm.vector_index_scan(node.est_rows, dim, ef_search or idx.params.ef_search)
        rest = [q for q in preds if q is not p]
        top: PlanNode = node
        if scan.filters or rest:
            top = Filter(node, list(scan.filters) + rest)
            top.est_rows = rows
            extra_dims = sum(_dim(cat, scan.relation, q.column) for q in rest)
            top.est_cost = node.est_cost + cm.filter(node.est_rows, extra_dims)
        accesses.append(_Access(top, rows, top.est_cost))
    return _RelInfo(scan.relation, total, rows, accesses, True)


# -- join estimation ----------------------------------------------------------------


def _edge_divisor(ctx: PlanContext, edge: JoinEdge) -> float:
    left = ctx.catalog.stats(edge.left, edge.left_columns).ndv
    right = ctx.catalog.stats(edge.right, edge.right_columns).ndv
    return float(max(left, right, 1))


def _join_rows(ctx: PlanContext, left_rows: float, left_rels, rel: str) -> float:
    out = left_rows * ctx.rels[rel].rows
    for e in ctx.logical.edges_between(left_rels, rel):
        out /= _edge_divisor(ctx, e)
    return out


def _key_lists(ctx: PlanContext, left_rels, rel: str):
    outer_keys, inner_cols = [], []
    for e in ctx.logical.edges_between(left_rels, rel):
        other = e.other(rel)
        for oc, ic in zip(e.columns_for(other), e.columns_for(rel)):
            outer_keys.append((other, oc))
            inner_cols.append(ic)
    return outer_keys, inner_cols


def _join_alternatives(ctx: PlanContext, left: _Partial, rel: str) -> list[_Partial]:
    cm = ctx.cost_model
    info = ctx.rels[rel]
    left_rels = frozenset(left.order)
    out_rows = _join_rows(ctx, left.rows, left_rels, rel)
    outer_keys, inner_cols = _key_lists(ctx, left_rels, rel)
    order = left.order + (rel,)
    alts = []
    for acc in info.accesses:
        build = "left" if left.rows < acc.rows else "right"
        b, p = (left.rows, acc.rows) if build == "left" else (acc.rows, left.rows)
        node = HashJoin(left.node, acc.node, outer_keys, [(rel, c) for c in inner_cols], build)
        node.est_rows = out_rows
        node.est_cost = left.cost + acc.cost + cm.hash_join(b, p)
        alts.append(_Partial(node, out_rows, node.est_cost, order))
    if not info.has_vector and ctx.catalog.key_index(rel, inner_cols) is not None:
        scan = ctx.logical.scan(rel)
        ndv = max(ctx.catalog.stats(rel, inner_cols).ndv, 1)
        fetched = left.rows * info.total_rows / ndv
        node = IndexNestedLoopJoin(left.node, rel, outer_keys, inner_cols, scan.filters)
        node.inner_est_rows = fetched
        node.est_rows = out_rows
        node.est_cost = left.cost + cm.index_nl_join(left.rows, fetched) + cm.filter(fetched if scan.filters else 0)
        alts.append(_Partial(node, out_rows, node.est_cost, order))
    return alts


def _better(a: _Partial, b: _Partial | None) -> bool:
    if b is None:
        return True
    scale = max(abs(a.cost), abs(b.cost), 1e-300)
    if a.cost < b.cost - _REL_TOL * scale:
        return True
    if a.cost > b.cost + _REL_TOL * scale:
        return False
    return a.order < b.order


# -- enumeration --------------------------------------------------------------------


def enumerate_join_orders(relations: list[str], joins: list[JoinEdge],
                          rows: dict[str, float] | None = None,
                          limit: int = EXHAUSTIVE_LIMIT) -> tuple[list[tuple[str, ...]], bool]:
    """Left-deep orders without cross products.

    Up to ``limit`` relations every valid order is returned (exhaustive=True);
    beyond it a single greedy order (smallest estimated input first, then the
    connected relation with the smallest estimated size) is returned.
    """
    if not is_connected(relations, joins):
        raise DisconnectedJoinGraph(f"join graph over {relations} is disconnected")
    adj: dict[str, set[str]] = {r: set() for r in relations}
    for e in joins:
        adj[e.left].add(e.right)
        adj[e.right].add(e.left)
    if len(relations) > limit:
        rows = rows or {}
        size = lambda r: (rows.get(r, 1.0), r)  # noqa: E731
        order = [min(relations, key=size)]
        while len(order) < len(relations):
            frontier = {n for r in order for n in adj[r]} - set(order)
            order.append(min(frontier, key=size))
        return [tuple(order)], False
    out: list[tuple[str, ...]] = []

    def extend(prefix: list[str], members: set[str]):
        if len(prefix) == len(relations):
            out.append(tuple(prefix))
            return
        frontier = sorted({n for r in prefix for n in adj[r]} - members)
        for r in frontier:
            prefix.append(r)
            members.add(r)
            extend(prefix, members)
            prefix.pop()
            members.discard(r)

    for first in sorted(relations):
        extend([first], {first})
    return out, True


def _dp(ctx: PlanContext) -> tuple[_Partial, bool]:
    rels = sorted(ctx.rels)
    if len(rels) > EXHAUSTIVE_LIMIT:
        return _greedy(ctx), False
    best: dict[frozenset, _Partial] = {}
    for r in rels:
        for acc in ctx.rels[r].accesses:
            cand = _Partial(acc.node, acc.rows, acc.cost, (r,))
            if _better(cand, best.get(frozenset((r,)))):
                best[frozenset((r,))] = cand
    for size in range(2, len(rels) + 1):
        for subset in itertools.combinations(rels, size - 1):
            left = best.get(frozenset(subset))
            if left is None:
                continue
            for r in rels:
                if r in subset or not ctx.logical.edges_between(set(subset), r):
                    continue
                key = frozenset(subset + (r,))
                for cand in _join_alternatives(ctx, left, r):
                    if _better(cand, best.get(key)):
                        best[key] = cand
    return best[frozenset(rels)], True


def _greedy(ctx: PlanContext) -> _Partial:
    rows = {r: info.rows for r, info in ctx.rels.items()}
    (order,), _ = enumerate_join_orders(sorted(ctx.rels), ctx.logical.joins, rows, limit=0)
    first = min(ctx.rels[order[0]].accesses, key=lambda a: a.cost)
    cur = _Partial(first.node, first.rows, first.cost, (order[0],))
    for r in order[1:]:
        alts = _join_alternatives(ctx, cur, r)
        pick = None
        for a in alts:
            if _better(a, pick):
                pick = a
        cur = pick
    return cur


def _ndv_guess(ctx: PlanContext, expr: Expr) -> float:
    if isinstance(expr, Col) and not isinstance(expr, Dist):
        return float(ctx.catalog.stats(expr.relation, [expr.column]).ndv)
    return 25.0


def _finish(ctx: PlanContext, best: _Partial) -> PlanNode:
    lg, cm = ctx.logical, ctx.cost_model
    node, rows, cost = best.node, best.rows, best.cost
    if lg.aggregate is not None:
        groups = 1.0
        for _, e in lg.aggregate.group_by:
            groups *= _ndv_guess(ctx, e)
        agg = Aggregate(node, lg.aggregate.group_by, lg.aggregate.aggregates)
        rows = min(rows, groups) if lg.aggregate.group_by else 1.0
        cost += cm.aggregate(best.rows)
        agg.est_rows, agg.est_cost = rows, cost
        node = agg
    elif lg.project is not None:
        proj = Project(node, lg.project)
        proj.est_rows, proj.est_cost = rows, cost
        node = proj
    if lg.order_by and not _ordered_by_index(lg, best.node):
        s = Sort(node, lg.order_by)
        cost += cm.sort(rows)
        s.est_rows, s.est_cost = rows, cost
        node = s
    if lg.limit is not None:
        lim = Limit(node, lg.limit)
        rows = min(rows, lg.limit)
        lim.est_rows, lim.est_cost = rows, cost
        node = lim
    return node


def _ordered_by_index(lg: LogicalPlan, join_root: PlanNode) -> bool:
    """A lone index scan already emits rows by ascending (distance, row id)."""
    if lg.aggregate is not None or lg.project is None or len(lg.order_by) != 1:
        return False
    key, desc = lg.order_by[0]
    if desc:
        return False
    scan = join_root.children[0] if isinstance(join_root, Filter) else join_root
    if not isinstance(scan, VectorIndexScan):
        return False
    expr = dict(lg.project)[key]
    p = scan.vector_predicate
    return isinstance(expr, Dist) and (expr.relation, expr.column) == (p.relation, p.column)


def plan(logical: LogicalPlan, estimators: EstimatorFramework, catalog: Catalog,
         cost_model: CostModel | None = None, session: ProbeCache | None = None) -> PhysicalPlan:
    t0 = time.perf_counter()
    ctx = prepare(logical, estimators, catalog, cost_model, session)
    best, exhaustive = _dp(ctx)
    root = _finish(ctx, best)
    ms = (time.perf_counter() - t0) * 1e3
    return PhysicalPlan(root, logical, estimators.kind, ctx.estimates, best.order, exhaustive,
                        ms, ctx.estimation_ms, ctx.probes)


def enumerate_plans(logical: LogicalPlan, estimators: EstimatorFramework, catalog: Catalog,
                    cost_model: CostModel | None = None, session: ProbeCache | None = None) -> Iterator[PhysicalPlan]:
    """Every plan the planner can choose between: all left-deep orders x access paths x join methods."""
    ctx = prepare(logical, estimators, catalog, cost_model, session)
    orders, _ = enumerate_join_orders(logical.relations, logical.joins)
    for order in orders:
        for first in ctx.rels[order[0]].accesses:
            start = _Partial(first.node, first.rows, first.cost, (order[0],))
            for final in _extend_all(ctx, start, order[1:]):
                yield PhysicalPlan(_finish(ctx, final), logical, estimators.kind, ctx.estimates,
                                   final.order, True, 0.0, ctx.estimation_ms, ctx.probes)


def _extend_all(ctx: PlanContext, cur: _Partial, rest: tuple[str, ...]) -> Iterator[_Partial]:
    if not rest:
        yield cur
        return
    for alt in _join_alternatives(ctx, cur, rest[0]):
        yield from _extend_all(ctx, alt, rest[1:])
