"""Physical operator tree produced by the planner and consumed by the executor."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from ..predicates import Expr, Predicate, VectorRangePredicate
from ..vector_index import RangeResult
from .logical import AggSpec, LogicalPlan


class PlanNode:
    op = "Node"

    def __init__(self, children: list[PlanNode] | None = None):
        self.children: list[PlanNode] = children or []
        self.est_rows = 0.0
        self.est_cost = 0.0
        self.reset_stats()

    def reset_stats(self) -> None:
        self.observed_rows: int | None = None
        self.elapsed_ms: float | None = None
        self.inclusive_ms = 0.0
        self.exhausted = False

    def detail(self) -> str:
        return ""

    def signature(self) -> str:
        inner = ",".join(c.signature() for c in self.children)
        return f"{self.op}[{self.detail()}]({inner})"

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def relations(self) -> set[str]:
        out: set[str] = set()
        for c in self.children:
            out |= c.relations()
        return out

    @property
    def annotations(self) -> list[str]:
        return []


class SeqScan(PlanNode):
    op = "SeqScan"

    def __init__(self, relation: str, filters: list[Predicate] | None = None,
                 vector_predicate: VectorRangePredicate | None = None):
        super().__init__()
        self.relation = relation
        self.filters = list(filters or [])
        self.vector_predicate = vector_predicate

    def detail(self):
        parts = [self.relation] + [str(f) for f in self.filters]
        if self.vector_predicate is not None:
            parts.append(str(self.vector_predicate))
        return "; ".join(parts)

    def relations(self):
        return {self.relation}


class VectorIndexScan(PlanNode):
    op = "VectorIndexScan"

    def __init__(self, relation: str, predicate: VectorRangePredicate, cache: RangeResult | None = None):
        super().__init__()
        self.relation = relation
        self.vector_predicate = predicate
        self.cache = cache

    def detail(self):
        return f"{self.relation}; {self.vector_predicate}"

    def relations(self):
        return {self.relation}

    @property
    def annotations(self):
        return ["ann-probe-reused"] if self.cache is not None else []


class Filter(PlanNode):
    op = "Filter"

    def __init__(self, child: PlanNode, predicates: list[Predicate | VectorRangePredicate]):
        super().__init__([child])
        self.predicates = list(predicates)

    def detail(self):
        return "; ".join(str(p) for p in self.predicates)


class HashJoin(PlanNode):
    """``children[0]`` is the left (outer, earlier-joined) input.  ``build_side`` names
    which input is materialized into the hash table; the other is streamed."""

    op = "HashJoin"

    def __init__(self, left: PlanNode, right: PlanNode, left_keys: list[tuple[str, str]],
                 right_keys: list[tuple[str, str]], build_side: str = "right"):
        super().__init__([left, right])
        self.left_keys = list(left_keys)
        self.right_keys = list(right_keys)
        if build_side not in ("left", "right"):
            raise ValueError(build_side)
        self.build_side = build_side

    def detail(self):
        keys = " AND ".join(f"{a}.{b} = {c}.{d}" for (a, b), (c, d) in zip(self.left_keys, self.right_keys))
        return f"{keys}; build={self.build_side}"


class IndexNestedLoopJoin(PlanNode):
    """Streams ``children[0]`` and probes the key index of base relation ``inner``."""

    op = "IndexNestedLoopJoin"

    def __init__(self, outer: PlanNode, inner: str, outer_keys: list[tuple[str, str]],
                 inner_columns: list[str], inner_filters: list[Predicate] | None = None):
        super().__init__([outer])
        self.inner = inner
        self.outer_keys = list(outer_keys)
        self.inner_columns = list(inner_columns)
        self.inner_filters = list(inner_filters or [])
        self.inner_est_rows = 0.0

    def detail(self):
        keys = " AND ".join(f"{a}.{b} = {self.inner}.{c}" for (a, b), c in zip(self.outer_keys, self.inner_columns))
        filt = "".join(f"; {f}" for f in self.inner_filters)
        return f"{self.inner}; {keys}{filt}"

    def relations(self):
        return super().relations() | {self.inner}


class Project(PlanNode):
    op = "Project"

    def __init__(self, child: PlanNode, outputs: list[tuple[str, Expr]]):
        super().__init__([child])
        self.outputs = list(outputs)

    def detail(self):
        return ", ".join(f"{n}={e}" for n, e in self.outputs)


class Aggregate(PlanNode):
    op = "Aggregate"

    def __init__(self, child: PlanNode, group_by: list[tuple[str, Expr]], aggregates: list[AggSpec]):
        super().__init__([child])
        self.group_by = list(group_by)
        self.aggregates = list(aggregates)

    def detail(self):
        g = ", ".join(n for n, _ in self.group_by)
        a = ", ".join(f"{s.func}({s.expr})" for s in self.aggregates)
        return f"group by {g}; {a}"


class Sort(PlanNode):
    op = "Sort"

    def __init__(self, child: PlanNode, keys: list[tuple[str, bool]]):
        super().__init__([child])
        self.keys = list(keys)

    def detail(self):
        return ", ".join(f"{k} {'desc' if d else 'asc'}" for k, d in self.keys)


class Limit(PlanNode):
    op = "Limit"

    def __init__(self, child: PlanNode, n: int):
        super().__init__([child])
        self.n = n

    def detail(self):
        return str(self.n)


JOIN_OPS = (HashJoin.op, IndexNestedLoopJoin.op)
SCAN_OPS = (SeqScan.op, VectorIndexScan.op)


@dataclass
class PhysicalPlan:
    root: PlanNode
    logical: LogicalPlan
    estimator: str = ""
    estimates: dict = field(default_factory=dict)
    join_order: tuple[str, ...] = ()
    exhaustive: bool = True
    planning_ms: float = 0.0
    estimation_ms: float = 0.0
    planning_index_searches: int = 0

    @property
    def total_cost(self) -> float:
        return self.root.est_cost

    @property
    def plan_hash(self) -> str:
        return hashlib.sha256(self.root.signature().encode()).hexdigest()[:16]

    def nodes(self):
        return list(self.root.walk())

    def find(self, op: str) -> list[PlanNode]:
        return [n for n in self.root.walk() if n.op == op]

    def vector_scan_nodes(self) -> list[PlanNode]:
        return [n for n in self.root.walk()
                if isinstance(n, (SeqScan, VectorIndexScan)) and n.vector_predicate is not None]

    def reset_stats(self) -> None:
        for n in self.root.walk():
            n.reset_stats()

    def join_methods(self) -> dict[frozenset[str], str]:
        """Join method keyed by the pair of relations the join connects first."""
        out = {}
        for n in self.root.walk():
            if isinstance(n, IndexNestedLoopJoin):
                for (rel, _), _c in zip(n.outer_keys, n.inner_columns):
                    out[frozenset((rel, n.inner))] = n.op
            elif isinstance(n, HashJoin):
                for (a, _), (b, _) in zip(n.left_keys, n.right_keys):
                    out[frozenset((a, b))] = n.op
        return out

    def scan_methods(self) -> dict[str, str]:
        out = {}
        for n in self.root.walk():
            if isinstance(n, (SeqScan, VectorIndexScan)):
                out[n.relation] = n.op
            elif isinstance(n, IndexNestedLoopJoin):
                out[n.inner] = "IndexLookup"
        return out
