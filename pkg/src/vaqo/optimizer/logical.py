"""Logical query shape: filtered base scans joined on equi-keys, then aggregate/project, sort, limit."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..predicates import Expr, Predicate, VectorRangePredicate


@dataclass
class Scan:
    relation: str
    filters: list[Predicate] = field(default_factory=list)
    vector_predicates: list[VectorRangePredicate] = field(default_factory=list)


@dataclass(frozen=True)
class JoinEdge:
    left: str
    right: str
    left_columns: tuple[str, ...]
    right_columns: tuple[str, ...]

    def __post_init__(self):
        if len(self.left_columns) != len(self.right_columns) or not self.left_columns:
            raise ValueError("join edge needs matching, non-empty key lists")

    def columns_for(self, relation: str) -> tuple[str, ...]:
        return self.left_columns if relation == self.left else self.right_columns

    def other(self, relation: str) -> str:
        return self.right if relation == self.left else self.left


@dataclass
class AggSpec:
    name: str
    func: str  # sum | count | avg | min | max
    expr: Expr | None = None


@dataclass
class Aggregate:
    group_by: list[tuple[str, Expr]]
    aggregates: list[AggSpec]

    def output_names(self) -> list[str]:
        return [n for n, _ in self.group_by] + [a.name for a in self.aggregates]


@dataclass
class LogicalPlan:
    scans: list[Scan]
    joins: list[JoinEdge] = field(default_factory=list)
    aggregate: Aggregate | None = None
    project: list[tuple[str, Expr]] | None = None
    order_by: list[tuple[str, bool]] = field(default_factory=list)  # (output name, descending)
    limit: int | None = None
    name: str = "query"

    def scan(self, relation: str) -> Scan:
        for s in self.scans:
            if s.relation == relation:
                return s
        raise KeyError(relation)

    @property
    def relations(self) -> list[str]:
        return [s.relation for s in self.scans]

    def vector_predicates(self) -> list[VectorRangePredicate]:
        return [p for s in self.scans for p in s.vector_predicates]

    def output_names(self) -> list[str]:
        if self.aggregate is not None:
            return self.aggregate.output_names()
        if self.project is not None:
            return [n for n, _ in self.project]
        return []

    def edges_between(self, left: set[str] | frozenset[str], relation: str) -> list[JoinEdge]:
        return [e for e in self.joins
                if (e.left == relation and e.right in left) or (e.right == relation and e.left in left)]

    def validate(self) -> None:
        names = self.relations
        if len(set(names)) != len(names):
            raise ValueError("each relation may appear once")
        for e in self.joins:
            if e.left not in names or e.right not in names:
                raise ValueError(f"join edge {e} references a relation outside the query")
        for p in self.vector_predicates():
            if p.relation not in names:
                raise ValueError(f"vector predicate on {p.relation} outside the query")
        if not is_connected(names, self.joins):
            raise DisconnectedJoinGraph(f"join graph over {names} is disconnected")
        outs = set(self.output_names())
        for key, _ in self.order_by:
            if key not in outs:
                raise ValueError(f"ORDER BY key {key!r} is not an output column")


class DisconnectedJoinGraph(ValueError):
    pass


def is_connected(relations: list[str], joins: list[JoinEdge]) -> bool:
    if not relations:
        return True
    adj: dict[str, set[str]] = {r: set() for r in relations}
    for e in joins:
        adj[e.left].add(e.right)
        adj[e.right].add(e.left)
    seen = {relations[0]}
    stack = [relations[0]]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(relations)
