"""Cardinality estimation for vector range predicates.

Four sources are pluggable behind :class:`EstimatorFramework`:

* fixed-selectivity heuristics mirroring what common vector extensions assume,
* index probing at plan time (ECQO), whose candidate set is cached so the
  executor never searches the index a second time,
* uniform sampling with a statistically sized sample, and
* the same sampling with a momentum controller that resizes the sample from
  observed Q-error feedback.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .predicates import VectorRangePredicate
from .storage import Relation
from .vector_index import HnswIndex, HnswParams, RangeResult, l2_distances, range_search


class HeuristicMode(Enum):
    PGVECTOR = "pgvector"
    VBASE = "vbase"
    DUCKDB = "duckdb"

    @property
    def selectivity(self) -> float:
        return HEURISTIC_SELECTIVITY[self]


HEURISTIC_SELECTIVITY = {
    HeuristicMode.PGVECTOR: 0.333,
    HeuristicMode.VBASE: 0.500,
    HeuristicMode.DUCKDB: 1.000,
}

SOURCES = ("heuristic", "ecqo", "sampling-fixed", "sampling-adaptive")


def round_half_up(x: float) -> int:
    """Round half away from zero (``round`` in Python is banker's rounding)."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass
class CardinalityEstimate:
    value: int
    source: str
    planning_cost_ms: float = 0.0
    cache: RangeResult | None = None
    sample_size: int | None = None

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"cardinality must be >= 0, got {self.value}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown estimate source {self.source!r}")
        if (self.cache is not None) != (self.source == "ecqo"):
            raise ValueError("a candidate cache is carried exactly by ECQO estimates")


def estimate_heuristic(row_count: int, mode: HeuristicMode | str) -> CardinalityEstimate:
    mode = HeuristicMode(mode)
    if row_count < 0:
        raise ValueError("row_count must be >= 0")
    return CardinalityEstimate(round_half_up(mode.selectivity * row_count), "heuristic")


# -- ECQO -------------------------------------------------------------------------


class ProbeCache:
    """Per-planning-session memo of index probes keyed by (predicate, index version)."""

    def __init__(self):
        self._results: dict[tuple, RangeResult] = {}
        self.probes = 0

    def get(self, index: HnswIndex, predicate: VectorRangePredicate) -> tuple[RangeResult, bool]:
        key = (*predicate.key, index.version)
        hit = self._results.get(key)
        if hit is not None:
            return hit, True
        result = range_search(index, predicate.query_vector, predicate.threshold)
        self.probes += 1
        self._results[key] = result
        return result, False


def estimate_ecqo(index: HnswIndex | None, predicate: VectorRangePredicate,
                  session: ProbeCache | None = None) -> CardinalityEstimate:
    if index is None:
        raise LookupError(f"no vector index on {predicate.relation}.{predicate.column}")
    if (index.relation, index.column) != (predicate.relation, predicate.column) and index.relation:
        raise LookupError(f"index covers {index.relation}.{index.column}, not {predicate.relation}.{predicate.column}")
    t0 = time.perf_counter()
    if session is None:
        result = range_search(index, predicate.query_vector, predicate.threshold)
    else:
        result, _ = session.get(index, predicate)
    ms = (time.perf_counter() - t0) * 1e3
    return CardinalityEstimate(len(result), "ecqo", ms, cache=result)


# -- sampling ---------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingParams:
    z: float = 1.96
    p_hat: float = 0.5
    e: float = 0.05

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError("z must be > 0")
        if not 0 < self.p_hat < 1:
            raise ValueError("p_hat must be in (0, 1)")
        if not 0 < self.e < 1:
            raise ValueError("e must be in (0, 1)")


def compute_sample_size(params: SamplingParams) -> int:
    n = params.z**2 * params.p_hat * (1 - params.p_hat) / params.e**2
    # absorb representation error so exact integers do not ceil upwards
    return max(1, math.ceil(n - 1e-9))


@dataclass(frozen=True)
class AdaptiveHyperparams:
    m: float = 0.9
    eta0: float = 0.1
    alpha: float = 50.0
    beta: float = 1.5
    gamma: float = 0.99
    cadence: int = 50
    ratio_scale: str = "fraction"
    n_min: int = 64
    n_max_floor: int = 385
    n_max_share: float = 0.05

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.ratio_scale not in ("fraction", "percent"):
            raise ValueError("ratio_scale is 'fraction' or 'percent'")

    def bounds(self, row_count: int) -> tuple[int, int]:
        return self.n_min, max(self.n_max_floor, int(self.n_max_share * row_count))


@dataclass
class EstimatorState:
    table: str
    column: str
    sampling_size: int
    learning_rate: float
    hyperparams: AdaptiveHyperparams = field(default_factory=AdaptiveHyperparams)
    momentum: float = 0.0
    queries_since_update: int = 0
    q_error_window: list[float] = field(default_factory=list)
    updates_applied: int = 0

    @classmethod
    def initial(cls, table: str, column: str, sampling: SamplingParams | None = None,
                hyperparams: AdaptiveHyperparams | None = None) -> "EstimatorState":
        hp = hyperparams or AdaptiveHyperparams()
        return cls(table, column, compute_sample_size(sampling or SamplingParams()), hp.eta0, hp)

    def to_json(self) -> dict:
        return {
            "table": self.table,
            "column": self.column,
            "sampling_size": self.sampling_size,
            "momentum": self.momentum,
            "learning_rate": self.learning_rate,
            "updates_applied": self.updates_applied,
        }


def estimate_by_sampling(relation: Relation, column: str, predicate: VectorRangePredicate,
                         sample_size: int | EstimatorState, rng_seed: int,
                         adaptive: bool | None = None) -> CardinalityEstimate:
    """Scale the match rate of a uniform sample (without replacement) to the table."""
    if isinstance(sample_size, EstimatorState):
        adaptive = True if adaptive is None else adaptive
        sample_size = sample_size.sampling_size
    source = "sampling-adaptive" if adaptive else "sampling-fixed"
    t0 = time.perf_counter()
    n_rows = relation.row_count
    if n_rows == 0:
        return CardinalityEstimate(0, source, 0.0, sample_size=0)
    vecs = relation.values(column)
    n = min(int(sample_size), n_rows)
    if n >= n_rows:
        sample = vecs
    else:
        rng = np.random.default_rng(rng_seed)
        sample = vecs[np.sort(rng.permutation(n_rows)[:n])]
    matches = int(np.count_nonzero(l2_distances(sample, predicate.query_vector) < predicate.threshold))
    value = round_half_up(n_rows * matches / n)
    ms = (time.perf_counter() - t0) * 1e3
    return CardinalityEstimate(value, source, ms, sample_size=n)


def q_error(estimated: int, true_card: int) -> float:
    est = max(estimated, 1)
    true = max(true_card, 1)
    return max(est / true, true / est)


def adapt_sample_size(state: EstimatorState, observed_q_error: float, row_count: int) -> EstimatorState:
    """One momentum step on the sample size, then learning-rate decay.  Mutates and returns ``state``."""
    hp = state.hyperparams
    ratio = state.sampling_size / row_count if row_count else 0.0
    if hp.ratio_scale == "percent":
        ratio *= 100.0
    delta = hp.alpha * (observed_q_error - hp.beta) - (100.0 - hp.alpha) * ratio
    state.momentum = hp.m * state.momentum + state.learning_rate * delta
    lo, hi = hp.bounds(row_count)
    state.sampling_size = int(min(max(state.sampling_size + round_half_up(state.momentum), lo), hi))
    state.learning_rate *= hp.gamma
    state.q_error_window.clear()
    state.queries_since_update = 0
    state.updates_applied += 1
    return state


def record_feedback(state: EstimatorState, estimated: int, true_card: int, row_count: int) -> bool:
    """Log one query's Q-error; returns True when this feedback triggered an update."""
    state.q_error_window.append(q_error(estimated, true_card))
    state.queries_since_update += 1
    if len(state.q_error_window) >= state.hyperparams.cadence:
        window_q = float(np.mean(state.q_error_window))
        adapt_sample_size(state, window_q, row_count)
        return True
    return False


# -- framework --------------------------------------------------------------------

ESTIMATORS = (
    "heuristic:pgvector",
    "heuristic:vbase",
    "heuristic:duckdb",
    "ecqo",
    "sampling:fixed",
    "sampling:adaptive",
)


@dataclass
class EstimatorConfig:
    estimator: str = "heuristic:pgvector"
    hnsw: HnswParams | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    adaptive: AdaptiveHyperparams = field(default_factory=AdaptiveHyperparams)
    seed: int = 0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {', '.join(ESTIMATORS)}")
        if self.estimator == "ecqo" and self.hnsw is None:
            self.hnsw = HnswParams()

    def to_json(self) -> dict:
        out = {"estimator": self.estimator, "seed": self.seed,
               "sampling": asdict(self.sampling), "adaptive": asdict(self.adaptive)}
        if self.hnsw is not None:
            out["hnsw"] = asdict(self.hnsw)
        return out


class EstimatorFramework:
    """Routes vector-predicate estimates to the configured source and owns per-table state."""

    def __init__(self, config: EstimatorConfig | None = None):
        self.config = config or EstimatorConfig()
        self.states: dict[tuple[str, str], EstimatorState] = {}
        self._queries = 0

    @property
    def kind(self) -> str:
        return self.config.estimator

    def state(self, relation: str, column: str) -> EstimatorState:
        key = (relation, column)
        if key not in self.states:
            self.states[key] = EstimatorState.initial(relation, column, self.config.sampling, self.config.adaptive)
        return self.states[key]

    def estimate(self, catalog, predicate: VectorRangePredicate, session: ProbeCache | None = None) -> CardinalityEstimate:
        rel = catalog[predicate.relation]
        kind = self.config.estimator
        if kind.startswith("heuristic:"):
            return estimate_heuristic(rel.row_count, kind.split(":", 1)[1])
        if kind == "ecqo":
            return estimate_ecqo(catalog.vector_index(predicate.relation, predicate.column), predicate, session)
        seed = self.config.seed * 1_000_003 + self._queries
        if kind == "sampling:fixed":
            n = compute_sample_size(self.config.sampling)
            return estimate_by_sampling(rel, predicate.column, predicate, n, seed, adaptive=False)
        st = self.state(predicate.relation, predicate.column)
        return estimate_by_sampling(rel, predicate.column, predicate, st, seed, adaptive=True)

    def end_query(self) -> None:
        """Advance the sampling seed stream; called once per planned query."""
        self._queries += 1

    def feedback(self, catalog, predicate: VectorRangePredicate, estimated: int, true_card: int) -> bool:
        if self.config.estimator != "sampling:adaptive":
            return False
        st = self.state(predicate.relation, predicate.column)
        return record_feedback(st, estimated, true_card, catalog[predicate.relation].row_count)

    def dump_states(self) -> list[dict]:
        return [self.states[k].to_json() for k in sorted(self.states)]
