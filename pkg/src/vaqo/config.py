from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .cardinality import ESTIMATORS, AdaptiveHyperparams, EstimatorConfig, SamplingParams
from .optimizer.cost import COST_PROFILES, CostModel, cost_profile
from .vector_index import HnswParams


@dataclass
class EngineConfig:
    """Everything that determines how a query is estimated and planned.

    ``hnsw`` is kept only for the index-probing estimator; other estimators
    plan index scans with the index's own search parameters.
    """

    estimator: str = "heuristic:pgvector"
    hnsw: HnswParams | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    adaptive: AdaptiveHyperparams = field(default_factory=AdaptiveHyperparams)
    cost_profile: str = "default"
    seed: int = 0
    label: str | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {', '.join(ESTIMATORS)}")
        if self.cost_profile not in COST_PROFILES:
            raise ValueError(f"unknown cost profile {self.cost_profile!r}; choose from {', '.join(COST_PROFILES)}")
        if self.estimator == "ecqo":
            self.hnsw = self.hnsw or HnswParams()
        else:
            self.hnsw = None

    @property
    def name(self) -> str:
        return self.label or self.estimator

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(self.estimator, self.hnsw, self.sampling, self.adaptive, self.seed)

    def cost_model(self) -> CostModel:
        return cost_profile(self.cost_profile)

    def to_json(self) -> dict:
        out = {
            "estimator": self.estimator,
            "sampling": asdict(self.sampling),
            "adaptive": asdict(self.adaptive),
            "cost_profile": self.cost_profile,
            "seed": self.seed,
            "label": self.name,
        }
        if self.hnsw is not None:
            out["hnsw"] = asdict(self.hnsw)
        return out

    @classmethod
    def from_json(cls, data: dict) -> EngineConfig:
        return cls(
            estimator=data["estimator"],
            hnsw=HnswParams(**data["hnsw"]) if data.get("hnsw") else None,
            sampling=SamplingParams(**data.get("sampling", {})),
            adaptive=AdaptiveHyperparams(**data.get("adaptive", {})),
            cost_profile=data.get("cost_profile", "default"),
            seed=data.get("seed", 0),
            label=data.get("label"),
        )
