from __future__ import annotations

import json

from .physical import PhysicalPlan, PlanNode


def _node_json(node: PlanNode) -> dict:
    out = {
        "op": node.op,
        "detail": node.detail(),
        "est_rows": round(float(node.est_rows), 3),
        "obs_rows": node.observed_rows,
        "est_cost": round(float(node.est_cost), 3),
        "elapsed_ms": None if node.elapsed_ms is None else round(node.elapsed_ms, 4),
        "children": [_node_json(c) for c in node.children],
    }
    if node.annotations:
        out["annotations"] = node.annotations
    return out


def explain_json(plan: PhysicalPlan) -> dict:
    return {
        "plan_hash": plan.plan_hash,
        "estimator": plan.estimator,
        "join_order": list(plan.join_order),
        "exhaustive": plan.exhaustive,
        "total_cost": round(plan.total_cost, 3),
        "root": _node_json(plan.root),
    }


def explain_text(plan: PhysicalPlan, timings: bool = True) -> str:
    lines: list[str] = []

    def visit(node: PlanNode, depth: int):
        pad = "  " * depth + ("-> " if depth else "")
        obs = "" if node.observed_rows is None else f" obs={node.observed_rows}"
        ms = f" {node.elapsed_ms:.3f}ms" if timings and node.elapsed_ms is not None else ""
        notes = "".join(f" [{a}]" for a in node.annotations)
        detail = node.detail()
        lines.append(f"{pad}{node.op} ({detail}) est={node.est_rows:.0f} cost={node.est_cost:.1f}{obs}{ms}{notes}")
        for c in node.children:
            visit(c, depth + 1)

    visit(plan.root, 0)
    if not plan.exhaustive:
        lines.append("(join order chosen greedily; enumeration not exhaustive)")
    return "\n".join(lines)


def explain(plan: PhysicalPlan, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(explain_json(plan), indent=2)
    return explain_text(plan)
