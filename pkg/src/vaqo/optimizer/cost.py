"""Abstract cost model.  All terms are linear in the constants and monotone in row counts."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class CostModel:
    cost_seq_tuple: float = 1.0
    cost_index_probe_base: float = 10000.0
    cost_distance_per_dim: float = 0.01
    cost_index_fetch_tuple: float = 3.0
    cost_hash_build_tuple: float = 2.0
    cost_hash_probe_tuple: float = 1.5
    cost_nl_inner_lookup: float = 25.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be > 0")

    def scaled(self, factor: float) -> "CostModel":
        return replace(self, **{k: v * factor for k, v in asdict(self).items()})

    # -- per-operator formulas (exclusive of children) --

    def seq_scan(self, rows_in: float, dim: int = 0) -> float:
        """Full scan; ``dim`` > 0 when a vector predicate is evaluated on every row."""
        return rows_in * self.cost_seq_tuple + rows_in * dim * self.cost_distance_per_dim

    def vector_index_scan(self, result_rows: float, dim: int, ef_search: int) -> float:
        visited = ef_search + result_rows
        return (self.cost_index_probe_base + visited * dim * self.cost_distance_per_dim
                + result_rows * self.cost_index_fetch_tuple)

    def filter(self, rows_in: float, vector_dims: int = 0) -> float:
        return rows_in * (self.cost_seq_tuple + vector_dims * self.cost_distance_per_dim)

    def hash_join(self, build_rows: float, probe_rows: float) -> float:
        return build_rows * self.cost_hash_build_tuple + probe_rows * self.cost_hash_probe_tuple

    def index_nl_join(self, outer_rows: float, fetched_rows: float) -> float:
        return outer_rows * self.cost_nl_inner_lookup + fetched_rows * self.cost_index_fetch_tuple

    def aggregate(self, rows_in: float) -> float:
        return rows_in * self.cost_seq_tuple

    def sort(self, rows_in: float) -> float:
        return rows_in * math.log2(rows_in + 1) * self.cost_seq_tuple


COST_PROFILES: dict[str, CostModel] = {
    "default": CostModel(),
    # index scans priced like a disk-resident engine that overestimates graph traversal
    "pessimistic-index": CostModel(cost_index_probe_base=50000.0, cost_index_fetch_tuple=6.0),
}


def cost_profile(name: str) -> CostModel:
    try:
        return COST_PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown cost profile {name!r}; known: {', '.join(COST_PROFILES)}") from None
