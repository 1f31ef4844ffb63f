"""Query templates over the synthetic schema, threshold calibration and instantiation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..optimizer.logical import AggSpec, Aggregate, JoinEdge, LogicalPlan, Scan
from ..predicates import Col, Lit, Predicate, VectorRangePredicate, Year
from ..storage import Catalog, date_to_days
from ..vector_index import l2_distances


class CalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Calibration:
    threshold: float
    count: int
    target: int


def _target_count(n_rows: int, target: int | float) -> int:
    if isinstance(target, float):
        if not 0 < target <= 1:
            raise ValueError(f"selectivity target must be in (0, 1], got {target}")
        return max(1, round(target * n_rows))
    k = int(target)
    if not 0 <= k <= n_rows:
        raise ValueError(f"target {k} not achievable on {n_rows} rows")
    return k


def calibrate_threshold(catalog: Catalog, relation: str, column: str, query, target: int | float) -> Calibration:
    """Find D so that exactly (or within max(1, 2%) of) ``target`` rows satisfy ``dist < D``.

    ``target`` is a match count (int) or a selectivity fraction (float).
    The search bisects over the sorted brute-force distances; on duplicate-distance
    plateaus the nearest achievable count is returned with a warning.
    """
    vecs = catalog[relation].values(column)
    d = np.sort(l2_distances(np.ascontiguousarray(vecs), np.ascontiguousarray(query, dtype=np.float32)))
    n = len(d)
    k = _target_count(n, target)
    tol = max(1, int(0.02 * k))
    if n == 0:
        raise ValueError(f"{relation} is empty")

    def threshold_for(count: int) -> float:
        # smallest D giving exactly ``count`` rows under strict '<'
        if count == 0:
            return float(d[0]) / 2 if d[0] > 0 else math.nan
        if count >= n:
            return float(np.nextafter(d[-1], np.inf)) if d[-1] > 0 else 1e-12
        lo, hi = float(d[count - 1]), float(d[count])
        if lo == hi:
            return math.nan
        mid = (lo + hi) / 2
        return mid if lo < mid <= hi else hi

    D = threshold_for(k)
    if not math.isnan(D) and D > 0:
        return Calibration(D, int(np.count_nonzero(d < D)), k)
    # plateau: counts reachable are the left edges of runs of equal distances
    best = None
    for c in sorted(range(n + 1), key=lambda c: (abs(c - k), c)):
        t = threshold_for(c)
        if not math.isnan(t) and t > 0:
            best = (t, c)
            break
    if best is None:
        raise ValueError("no positive threshold reaches any count")
    t, c = best
    if abs(c - k) > tol:
        warnings.warn(f"target {k} unreachable on {relation}.{column}; using nearest count {c}",
                      CalibrationWarning, stacklevel=2)
    return Calibration(t, int(np.count_nonzero(d < t)), k)


def mean_pairwise_distance(catalog: Catalog, relation: str, column: str, pairs: int = 512, seed: int = 0) -> float:
    vecs = catalog[relation].values(column).astype(np.float64)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(vecs), pairs)
    j = rng.integers(0, len(vecs), pairs)
    return float(np.mean(np.sqrt(((vecs[i] - vecs[j]) ** 2).sum(axis=1))))


# -- templates ----------------------------------------------------------------------

_d = date_to_days
VEC_REL, VEC_COL = "partsupp", "ps_image_embedding"
PART_VEC = ("part", "p_text_embedding")
PS_LI = JoinEdge("partsupp", "lineitem", ("ps_partkey", "ps_suppkey"), ("l_partkey", "l_suppkey"))
LI_O = JoinEdge("lineitem", "orders", ("l_orderkey",), ("o_orderkey",))
PS_S = JoinEdge("partsupp", "supplier", ("ps_suppkey",), ("s_suppkey",))
P_PS = JoinEdge("part", "partsupp", ("p_partkey",), ("ps_partkey",))
P_LI = JoinEdge("part", "lineitem", ("p_partkey",), ("l_partkey",))
S_LI = JoinEdge("supplier", "lineitem", ("s_suppkey",), ("l_suppkey",))
L = lambda c: Col("lineitem", c)  # noqa: E731
REVENUE = L("l_extendedprice") * (Lit(1.0) - L("l_discount"))


def _q3(v):
    return LogicalPlan(
        [v(Scan("partsupp")), Scan("lineitem", [Predicate("lineitem", "l_shipdate", ">", _d("1995-03-15"))]),
         Scan("orders", [Predicate("orders", "o_orderdate", "<", _d("1995-03-15"))])],
        [PS_LI, LI_O],
        Aggregate([("l_orderkey", L("l_orderkey")), ("o_orderdate", Col("orders", "o_orderdate")),
                   ("o_shippriority", Col("orders", "o_shippriority"))], [AggSpec("revenue", "sum", REVENUE)]),
        order_by=[("revenue", True), ("o_orderdate", False)], limit=10, name="q3")


def _q5(v):
    return LogicalPlan(
        [v(Scan("partsupp")), Scan("supplier"), Scan("lineitem"),
         Scan("orders", [Predicate("orders", "o_orderdate", "between", (_d("1994-01-01"), _d("1994-12-31")))])],
        [PS_S, PS_LI, LI_O],
        Aggregate([("s_nationkey", Col("supplier", "s_nationkey"))], [AggSpec("revenue", "sum", REVENUE)]),
        order_by=[("revenue", True)], name="q5")


def _q8(v):
    return LogicalPlan(
        [Scan("part", [Predicate("part", "p_size", "<=", 25)]), v(Scan("partsupp")), Scan("lineitem"),
         Scan("orders", [Predicate("orders", "o_orderdate", "between", (_d("1995-01-01"), _d("1996-12-31")))])],
        [P_PS, PS_LI, LI_O],
        Aggregate([("o_year", Year(Col("orders", "o_orderdate")))], [AggSpec("volume", "sum", REVENUE)]),
        order_by=[("o_year", False)], name="q8")


def _q9(v):
    profit = REVENUE - Col("partsupp", "ps_supplycost") * L("l_quantity")
    return LogicalPlan(
        [Scan("part"), v(Scan("partsupp")), Scan("supplier"), Scan("lineitem"), Scan("orders")],
        [P_PS, PS_S, PS_LI, LI_O],
        Aggregate([("nation", Col("supplier", "s_nationkey")), ("o_year", Year(Col("orders", "o_orderdate")))],
                  [AggSpec("sum_profit", "sum", profit)]),
        order_by=[("nation", False), ("o_year", True)], name="q9")


def _q10(v):
    return LogicalPlan(
        [v(Scan("partsupp")), Scan("lineitem", [Predicate("lineitem", "l_returnflag", "=", "R")]),
         Scan("orders", [Predicate("orders", "o_orderdate", "between", (_d("1993-10-01"), _d("1993-12-31")))])],
        [PS_LI, LI_O],
        Aggregate([("o_custkey", Col("orders", "o_custkey"))], [AggSpec("revenue", "sum", REVENUE)]),
        order_by=[("revenue", True)], limit=20, name="q10")


def _q11(v):
    return LogicalPlan(
        [v(Scan("partsupp")), Scan("supplier", [Predicate("supplier", "s_nationkey", "<", 12)])],
        [PS_S],
        Aggregate([("ps_partkey", Col("partsupp", "ps_partkey"))],
                  [AggSpec("value", "sum", Col("partsupp", "ps_supplycost") * Col("partsupp", "ps_availqty"))]),
        order_by=[("value", True)], name="q11")


def _q12(v):
    return LogicalPlan(
        [v(Scan("partsupp")),
         Scan("lineitem", [Predicate("lineitem", "l_shipmode", "in", ("MAIL", "SHIP")),
                           Predicate("lineitem", "l_receiptdate", "between", (_d("1994-01-01"), _d("1994-12-31")))]),
         Scan("orders")],
        [PS_LI, LI_O],
        Aggregate([("l_shipmode", L("l_shipmode"))], [AggSpec("line_count", "count")]),
        order_by=[("l_shipmode", False)], name="q12")


def _q20(v):
    return LogicalPlan(
        [v(Scan("partsupp")), Scan("supplier"),
         Scan("lineitem", [Predicate("lineitem", "l_shipdate", "between", (_d("1994-01-01"), _d("1994-12-31")))])],
        [PS_S, S_LI],
        Aggregate([("s_name", Col("supplier", "s_name"))], [AggSpec("shipped_qty", "sum", L("l_quantity"))]),
        order_by=[("s_name", False)], name="q20")


def _ds7(v):
    return LogicalPlan(
        [v(Scan("part")), Scan("lineitem", [Predicate("lineitem", "l_discount", ">=", 0.05)]),
         Scan("orders", [Predicate("orders", "o_orderpriority", "=", "1-URGENT")]), Scan("supplier")],
        [P_LI, LI_O, S_LI],
        Aggregate([("p_brand", Col("part", "p_brand"))],
                  [AggSpec("avg_qty", "avg", L("l_quantity")), AggSpec("avg_price", "avg", L("l_extendedprice"))]),
        order_by=[("p_brand", False)], limit=100, name="ds7")


def _ds98(v):
    return LogicalPlan(
        [v(Scan("part")), Scan("lineitem", [Predicate("lineitem", "l_shipdate", "between",
                                                       (_d("1996-01-01"), _d("1996-03-31")))])],
        [P_LI],
        Aggregate([("p_type", Col("part", "p_type"))], [AggSpec("itemrevenue", "sum", L("l_extendedprice"))]),
        order_by=[("p_type", False)], name="ds98")


@dataclass(frozen=True)
class QueryTemplate:
    id: str
    build: Callable
    vector_relation: str = VEC_REL
    vector_column: str = VEC_COL
    tag_filter: bool = False
    second_vector: tuple[str, str] | None = None
    description: str = ""


TEMPLATES: dict[str, QueryTemplate] = {t.id: t for t in [
    QueryTemplate("q3", _q3, description="shipping priority: partsupp x lineitem x orders"),
    QueryTemplate("q5", _q5, description="revenue by supplier nation"),
    QueryTemplate("q8", _q8, description="yearly volume of small parts"),
    QueryTemplate("q9", _q9, description="profit by nation and year, five relations"),
    QueryTemplate("q10", _q10, description="returned-item revenue per customer"),
    QueryTemplate("q11", _q11, description="stock value per part"),
    QueryTemplate("q12", _q12, description="ship-mode line counts"),
    QueryTemplate("q20", _q20, description="supplier shipped quantity, lineitem joined on supplier only"),
    QueryTemplate("q3-tag", _q3, tag_filter=True, description="q3 with a tag equality on partsupp"),
    QueryTemplate("q3-mv", lambda v: _with_part(_q3(v)), second_vector=PART_VEC,
                  description="q3 with a second vector predicate on part"),
    QueryTemplate("ds7", _ds7, vector_relation="part", vector_column="p_text_embedding",
                  description="star join around lineitem"),
    QueryTemplate("ds98", _ds98, vector_relation="part", vector_column="p_text_embedding",
                  description="single fact table with part"),
]}
TPCH_TEMPLATES = ("q3", "q5", "q8", "q9", "q10", "q11", "q12", "q20")


def _with_part(lg: LogicalPlan) -> LogicalPlan:
    lg.scans.insert(0, Scan("part"))
    lg.joins.insert(0, P_PS)
    lg.name = "q3-mv"
    return lg


def get_template(tid: str) -> QueryTemplate:
    try:
        return TEMPLATES[tid.lower()]
    except KeyError:
        raise KeyError(f"unknown template {tid!r}; valid ids: {', '.join(TEMPLATES)}") from None


@dataclass
class QueryInstance:
    template: str
    logical: LogicalPlan
    seed: int
    threshold: float
    oracle: int
    target: int
    query_row: int
    oracles: dict[str, int] = field(default_factory=dict)
    tag: str | None = None

    @property
    def predicate(self) -> VectorRangePredicate:
        """The template's primary vector predicate (the one ``threshold`` and ``oracle`` describe)."""
        t = TEMPLATES[self.template]
        for p in self.logical.vector_predicates():
            if (p.relation, p.column) == (t.vector_relation, t.vector_column):
                return p
        raise LookupError(f"{self.template}: primary vector predicate missing")

    def metadata(self) -> dict:
        return {"template": self.template, "seed": self.seed, "threshold": self.threshold,
                "oracle": self.oracle, "target": self.target, "query_row": self.query_row,
                "oracles": self.oracles, "tag": self.tag}


def perturbed_query(catalog: Catalog, relation: str, column: str, rng: np.random.Generator,
                    noise: float = 0.01) -> tuple[np.ndarray, int]:
    """A stored vector plus gaussian noise with sigma = ``noise`` x mean pairwise distance."""
    vecs = catalog[relation].values(column)
    row = int(rng.integers(0, len(vecs)))
    sigma = noise * mean_pairwise_distance(catalog, relation, column)
    q = vecs[row].astype(np.float64) + rng.normal(0.0, sigma / math.sqrt(vecs.shape[1]), vecs.shape[1])
    return q.astype(np.float32), row


def instantiate(template: QueryTemplate | str, catalog: Catalog, seed: int,
                target: int | float = 200, second_target: float = 0.05) -> QueryInstance:
    """Concrete logical plan with a fresh query vector and a calibrated threshold.

    ``target`` is a match count (int) or selectivity (float in (0, 1)).
    """
    t = get_template(template) if isinstance(template, str) else template
    rng = np.random.default_rng([seed, sum(map(ord, t.id))])
    q, row = perturbed_query(catalog, t.vector_relation, t.vector_column, rng)
    cal = calibrate_threshold(catalog, t.vector_relation, t.vector_column, q, target)
    preds = [VectorRangePredicate(t.vector_relation, t.vector_column, q, cal.threshold)]
    oracles = {f"{t.vector_relation}.{t.vector_column}": cal.count}
    tag = None
    extra_filters = []
    if t.tag_filter:
        tag = str(catalog[t.vector_relation].values("ps_tag")[row])
        extra_filters.append(Predicate(t.vector_relation, "ps_tag", "=", tag))
    second = None
    if t.second_vector is not None:
        rel2, col2 = t.second_vector
        q2, _ = perturbed_query(catalog, rel2, col2, rng)
        cal2 = calibrate_threshold(catalog, rel2, col2, q2, second_target)
        second = VectorRangePredicate(rel2, col2, q2, cal2.threshold)
        oracles[f"{rel2}.{col2}"] = cal2.count

    def attach(scan: Scan) -> Scan:
        scan.vector_predicates.extend(preds)
        scan.filters.extend(extra_filters)
        return scan

    lg = t.build(attach)
    if second is not None:
        lg.scan(second.relation).vector_predicates.append(second)
    lg.name = t.id
    lg.validate()
    return QueryInstance(t.id, lg, seed, cal.threshold, cal.count, cal.target, row, oracles, tag)
