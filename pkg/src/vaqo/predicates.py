"""Predicates and scalar expressions shared by the planner, executor and estimators."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .storage import days_to_date

Getter = Callable[[str, str], np.ndarray]

_CMP = {
    "=": np.equal,
    "!=": np.not_equal,
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}


@dataclass(frozen=True)
class Predicate:
    """``relation.column <op> value`` over a single base relation."""

    relation: str
    column: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _CMP and self.op not in ("between", "in"):
            raise ValueError(f"unsupported operator {self.op!r}")

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        if self.op == "between":
            lo, hi = self.value
            return (values >= lo) & (values <= hi)
        if self.op == "in":
            return np.isin(values, list(self.value))
        return _CMP[self.op](values, self.value)

    def holds(self, v) -> bool:
        if self.op == "between":
            return self.value[0] <= v <= self.value[1]
        if self.op == "in":
            return v in self.value
        return bool(_CMP[self.op](v, self.value))

    def __str__(self) -> str:
        return f"{self.relation}.{self.column} {self.op} {self.value!r}"


@dataclass(frozen=True, eq=False)
class VectorRangePredicate:
    """``relation.column <-> query_vector < threshold`` under L2 distance."""

    relation: str
    column: str
    query_vector: np.ndarray
    threshold: float
    metric: str = "l2"
    _digest: str = field(init=False, repr=False)

    def __post_init__(self):
        q = np.ascontiguousarray(self.query_vector, dtype=np.float32)
        object.__setattr__(self, "query_vector", q)
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if self.metric != "l2":
            raise ValueError("only the L2 metric is supported")
        h = hashlib.sha1(q.tobytes())
        h.update(repr(float(self.threshold)).encode())
        object.__setattr__(self, "_digest", h.hexdigest()[:16])

    @property
    def key(self) -> tuple:
        return (self.relation, self.column, self._digest)

    @property
    def dist_name(self) -> str:
        return f"__dist__.{self.column}"

    def __eq__(self, other) -> bool:
        return isinstance(other, VectorRangePredicate) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __str__(self) -> str:
        return f"{self.relation}.{self.column} <-> q#{self._digest[:8]} < {self.threshold:.6g}"


# -- expressions ------------------------------------------------------------------


class Expr:
    def evaluate(self, get: Getter) -> np.ndarray:
        raise NotImplementedError

    def row(self, get1: Callable[[str, str], object]):
        raise NotImplementedError

    def relations(self) -> set[str]:
        return set()

    def __mul__(self, other):
        return Bin("*", self, _lift(other))

    def __rmul__(self, other):
        return Bin("*", _lift(other), self)

    def __sub__(self, other):
        return Bin("-", self, _lift(other))

    def __rsub__(self, other):
        return Bin("-", _lift(other), self)

    def __add__(self, other):
        return Bin("+", self, _lift(other))


def _lift(v) -> Expr:
    return v if isinstance(v, Expr) else Lit(v)


@dataclass(frozen=True)
class Col(Expr):
    relation: str
    column: str

    def evaluate(self, get):
        return get(self.relation, self.column)

    def row(self, get1):
        return get1(self.relation, self.column)

    def relations(self):
        return {self.relation}

    def __str__(self):
        return f"{self.relation}.{self.column}"


@dataclass(frozen=True)
class Dist(Col):
    """Distance to the query vector of the vector predicate on ``relation.column``."""

    def evaluate(self, get):
        return get(self.relation, f"__dist__.{self.column}")

    def row(self, get1):
        return get1(self.relation, f"__dist__.{self.column}")

    def __str__(self):
        return f"dist({self.relation}.{self.column})"


@dataclass(frozen=True)
class Lit(Expr):
    value: object

    def evaluate(self, get):
        return self.value

    def row(self, get1):
        return self.value

    def __str__(self):
        return repr(self.value)


_BIN = {"*": np.multiply, "-": np.subtract, "+": np.add}


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, get):
        return _BIN[self.op](self.left.evaluate(get), self.right.evaluate(get))

    def row(self, get1):
        a, b = self.left.row(get1), self.right.row(get1)
        return a * b if self.op == "*" else a - b if self.op == "-" else a + b

    def relations(self):
        return self.left.relations() | self.right.relations()

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Year(Expr):
    arg: Expr

    def evaluate(self, get):
        days = np.asarray(self.arg.evaluate(get)).astype("datetime64[D]")
        return days.astype("datetime64[Y]").astype(np.int64) + 1970

    def row(self, get1):
        return days_to_date(self.arg.row(get1)).year

    def relations(self):
        return self.arg.relations()

    def __str__(self):
        return f"year({self.arg})"
