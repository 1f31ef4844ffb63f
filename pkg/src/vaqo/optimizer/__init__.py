from .cost import COST_PROFILES, CostModel, cost_profile
from .explain import explain, explain_json, explain_text
from .logical import AggSpec, Aggregate, DisconnectedJoinGraph, JoinEdge, LogicalPlan, Scan
from .physical import PhysicalPlan
from .planner import PlanningError, enumerate_join_orders, enumerate_plans, plan, prepare, scalar_selectivity

__all__ = [
    "AggSpec",
    "Aggregate",
    "COST_PROFILES",
    "CostModel",
    "DisconnectedJoinGraph",
    "JoinEdge",
    "LogicalPlan",
    "PhysicalPlan",
    "PlanningError",
    "Scan",
    "cost_profile",
    "enumerate_join_orders",
    "enumerate_plans",
    "explain",
    "explain_json",
    "explain_text",
    "plan",
    "prepare",
    "scalar_selectivity",
]
