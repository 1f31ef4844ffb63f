import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaqo.benchmark import TEMPLATES, instantiate
from vaqo.cardinality import EstimatorConfig, EstimatorFramework
from vaqo.executor import BATCH_SIZE, Batch, ExecutionError, execute, run_reference
from vaqo.optimizer import JoinEdge, LogicalPlan, Scan, enumerate_plans, plan
from vaqo.optimizer.physical import HashJoin, PhysicalPlan, SeqScan, VectorIndexScan
from vaqo.predicates import Col, VectorRangePredicate
from vaqo.storage import Catalog, create_relation
from vaqo.vector_index import brute_force_range

from conftest import vector_relation


def fw(kind):
    return EstimatorFramework(EstimatorConfig(kind))


def two_table_catalog(left_rows=3, right_rows=0):
    cat = Catalog()
    a = cat.add(create_relation("a", [("id", "int64"), ("name", "string")]))
    a.append({"id": np.arange(left_rows), "name": [f"n{i}" for i in range(left_rows)]})
    b = cat.add(create_relation("b", [("aid", "int64"), ("x", "float64")]))
    b.append({"aid": np.arange(right_rows) % max(left_rows, 1), "x": np.arange(right_rows, dtype=float)})
    return cat


def test_seq_scan_three_rows():
    cat = two_table_catalog()
    node = SeqScan("a")
    res, stats = execute(PhysicalPlan(node, LogicalPlan([Scan("a")])), cat)
    assert len(res) == 3 and node.observed_rows == 3
    assert stats.ann_probe_count == 0 and stats.nodes[0]["observed_rows"] == 3


def test_empty_build_side():
    cat = two_table_catalog(3, 0)
    lg = LogicalPlan([Scan("a"), Scan("b")], [JoinEdge("a", "b", ("id",), ("aid",))],
                     project=[("name", Col("a", "name"))])
    root = HashJoin(SeqScan("a"), SeqScan("b"), [("a", "id")], [("b", "aid")], build_side="right")
    res, _ = execute(PhysicalPlan(root, lg), cat)
    assert len(res) == 0 and res.columns == ["name"]


def test_key_kind_mismatch():
    cat = two_table_catalog(3, 3)
    lg = LogicalPlan([Scan("a"), Scan("b")], [JoinEdge("a", "b", ("name",), ("aid",))])
    root = HashJoin(SeqScan("a"), SeqScan("b"), [("a", "name")], [("b", "aid")])
    with pytest.raises(ExecutionError, match="key"):
        execute(PhysicalPlan(root, lg), cat)


def test_limit_zero(tiny_catalog):
    inst = instantiate("q3", tiny_catalog, seed=1, target=0.5)
    inst.logical.limit = 0
    res, _ = execute(plan(inst.logical, fw("heuristic:pgvector"), tiny_catalog), tiny_catalog)
    assert len(res) == 0


def test_batches_are_bounded():
    cat = Catalog()
    cat.add(vector_relation("t", np.zeros((3000, 2), dtype=np.float32)))
    node = SeqScan("t")
    res, _ = execute(PhysicalPlan(node, LogicalPlan([Scan("t")])), cat)
    assert len(res) == 3000 and node.observed_rows == 3000
    b = Batch({"t": np.arange(3000)}, {}, 3000)
    assert [c.n for c in b.chunks()] == [BATCH_SIZE, BATCH_SIZE, 3000 - 2 * BATCH_SIZE]


def test_three_way_join_small_instance():
    rng = np.random.default_rng(4)
    cat = Catalog()
    for name, n in (("x", 100), ("y", 100), ("z", 100)):
        rel = cat.add(create_relation(name, [("k", "int64"), ("fk", "int64"), ("v", "vector(3)")]))
        rel.append({"k": np.arange(n), "fk": rng.integers(0, 30, n), "v": rng.normal(size=(n, 3)).astype(np.float32)})
    cat.create_key_index("y", ["k"])
    p = VectorRangePredicate("x", "v", np.zeros(3), 1.4)
    lg = LogicalPlan([Scan("x", vector_predicates=[p]), Scan("y"), Scan("z")],
                     [JoinEdge("x", "y", ("fk",), ("k",)), JoinEdge("y", "z", ("fk",), ("fk",))],
                     project=[("xk", Col("x", "k")), ("zk", Col("z", "k"))])
    ref = run_reference(lg, cat)
    n = 0
    for candidate in enumerate_plans(lg, fw("heuristic:pgvector"), cat):
        res, _ = execute(candidate, cat)
        assert res.multiset() == ref.multiset()
        n += 1
    assert n >= 4 and len(ref) > 0


def test_ecqo_plan_reuses_probe(desk_catalog):
    idx = desk_catalog.vector_index("partsupp", "ps_image_embedding")
    inst = instantiate("q3", desk_catalog, seed=2, target=200)
    before = idx.search_count
    p = plan(inst.logical, fw("ecqo"), desk_catalog)
    res, stats = execute(p, desk_catalog)
    assert stats.ann_probe_count == 0
    assert idx.search_count - before == 1
    (node,) = p.find("VectorIndexScan")
    assert node.observed_rows == len(node.cache)

    # the same tree without the cache searches once and produces the same rows
    cached = node.cache
    node.cache = None
    res2, stats2 = execute(p, desk_catalog)
    node.cache = cached
    assert stats2.ann_probe_count == 1
    assert res2.rows == res.rows


def test_index_scan_below_min_distance(desk_catalog):
    q = np.full(96, 40.0, dtype=np.float32)
    p = VectorRangePredicate("partsupp", "ps_image_embedding", q, 0.5)
    node = VectorIndexScan("partsupp", p)
    res, _ = execute(PhysicalPlan(node, LogicalPlan([Scan("partsupp", vector_predicates=[p])])), desk_catalog)
    assert len(res) == 0 and node.observed_rows == 0


def test_vector_scan_observed_matches_oracle(desk_catalog):
    inst = instantiate("q11", desk_catalog, seed=5, target=0.01)
    p = plan(inst.logical, fw("heuristic:duckdb"), desk_catalog)
    execute(p, desk_catalog)
    (node,) = p.vector_scan_nodes()
    assert node.op == "SeqScan"
    truth = brute_force_range(desk_catalog["partsupp"], "ps_image_embedding", inst.predicate.query_vector, inst.threshold)
    assert node.observed_rows == len(truth) == inst.oracle


def test_feedback_equals_observed_rows(desk_catalog):
    est = fw("sampling:adaptive")
    inst = instantiate("q3", desk_catalog, seed=6, target=0.01)
    p = plan(inst.logical, est, desk_catalog)
    _, stats = execute(p, desk_catalog, est)
    (node,) = p.vector_scan_nodes()
    (fb,) = stats.feedback
    assert fb["observed"] == node.observed_rows == inst.oracle
    assert fb["estimated"] == p.estimates[inst.predicate.key].value
    assert est.state("partsupp", "ps_image_embedding").q_error_window == [pytest.approx(
        max(fb["estimated"], 1, fb["observed"]) / max(min(fb["estimated"], fb["observed"]), 1))]


def test_stats_timings_and_json(tiny_catalog, tmp_path):
    inst = instantiate("q9", tiny_catalog, seed=3, target=0.5)
    p = plan(inst.logical, fw("heuristic:vbase"), tiny_catalog)
    res, stats = execute(p, tiny_catalog)
    assert all(n.elapsed_ms >= 0 for n in p.nodes())
    assert sum(n.elapsed_ms for n in p.nodes()) <= stats.total_ms * 1.05 + 0.05
    doc = json.loads(stats.dumps())
    assert doc["ann_probe_count"] == 0 and len(doc["nodes"]) == len(p.nodes())
    res.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].split(",") == res.columns and len(lines) == len(res) + 1


@pytest.mark.parametrize("tid", sorted(TEMPLATES))
def test_best_plan_matches_reference(tiny_catalog, tid):
    for kind in ("ecqo", "heuristic:duckdb", "sampling:fixed"):
        inst = instantiate(tid, tiny_catalog, seed=11, target=0.4)
        res, _ = execute(plan(inst.logical, fw(kind), tiny_catalog), tiny_catalog)
        ref = run_reference(inst.logical, tiny_catalog)
        assert res.columns == ref.columns
        assert res.rows == ref.rows


@settings(max_examples=15, deadline=None)
@given(tid=st.sampled_from(sorted(TEMPLATES)), seed=st.integers(0, 10_000), target=st.floats(0.05, 0.9))
def test_plan_independence(tiny_catalog, tid, seed, target):
    inst = instantiate(tid, tiny_catalog, seed=seed, target=target)
    ref = run_reference(inst.logical, tiny_catalog).multiset()
    for candidate in enumerate_plans(inst.logical, fw("heuristic:pgvector"), tiny_catalog):
        assert execute(candidate, tiny_catalog)[0].multiset() == ref
