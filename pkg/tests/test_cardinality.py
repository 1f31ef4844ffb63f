import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaqo.benchmark import calibrate_threshold, perturbed_query
from vaqo.cardinality import (
    HEURISTIC_SELECTIVITY,
    AdaptiveHyperparams,
    CardinalityEstimate,
    EstimatorConfig,
    EstimatorFramework,
    EstimatorState,
    HeuristicMode,
    ProbeCache,
    SamplingParams,
    adapt_sample_size,
    compute_sample_size,
    estimate_by_sampling,
    estimate_ecqo,
    estimate_heuristic,
    q_error,
    record_feedback,
)
from vaqo.predicates import VectorRangePredicate
from vaqo.storage import Catalog
from vaqo.vector_index import HnswParams, brute_force_range, build_index

from conftest import vector_relation

HUGE = 10**12


@pytest.fixture(scope="module")
def small():
    vecs = np.random.default_rng(11).normal(size=(600, 8)).astype(np.float32)
    cat = Catalog()
    cat.add(vector_relation("t", vecs))
    cat.add(vector_relation("u", vecs[:300].copy()))
    cat.vector_indexes[("t", "v")] = build_index(cat["t"], "v", HnswParams(M=8, ef_construction=64))
    return cat


def pred(q, d, rel="t"):
    return VectorRangePredicate(rel, "v", np.asarray(q, dtype=np.float32), d)


# -- heuristics ---------------------------------------------------------------------


@pytest.mark.parametrize("mode,expected", [("pgvector", 333), ("duckdb", 1000), ("vbase", 500)])
def test_heuristic_examples(mode, expected):
    est = estimate_heuristic(1000, mode)
    assert est.value == expected and est.source == "heuristic"


def test_heuristic_empty_table():
    assert estimate_heuristic(0, HeuristicMode.VBASE).value == 0


def test_heuristic_constants():
    assert {m.value: s for m, s in HEURISTIC_SELECTIVITY.items()} == {"pgvector": 0.333, "vbase": 0.5, "duckdb": 1.0}


@given(st.integers(0, 10**9), st.sampled_from(["pgvector", "vbase", "duckdb"]))
def test_heuristic_is_pure(rows, mode):
    a, b = estimate_heuristic(rows, mode), estimate_heuristic(rows, mode)
    assert a.value == b.value <= rows
    assert a.value == int(HeuristicMode(mode).selectivity * rows + 0.5)


def test_estimate_invariants():
    with pytest.raises(ValueError):
        CardinalityEstimate(-1, "heuristic")
    with pytest.raises(ValueError):
        CardinalityEstimate(1, "oracle")
    with pytest.raises(ValueError):
        CardinalityEstimate(1, "ecqo")  # ECQO must carry its candidate cache


# -- ECQO ---------------------------------------------------------------------------


def test_ecqo_below_min_distance(small):
    q = np.full(8, 9.0)
    est = estimate_ecqo(small.vector_index("t", "v"), pred(q, 0.5))
    assert est.value == 0 and len(est.cache) == 0


def test_ecqo_self_match(small):
    q = small["t"].values("v")[42]
    est = estimate_ecqo(small.vector_index("t", "v"), pred(q, 1e-4))
    assert est.value >= 1 and 42 in est.cache.row_ids.tolist()


def test_ecqo_within_oracle_band(catalog_10k):
    idx = catalog_10k.vector_index("partsupp", "ps_image_embedding")
    rng = np.random.default_rng(5)
    for _ in range(5):
        q, _ = perturbed_query(catalog_10k, "partsupp", "ps_image_embedding", rng)
        cal = calibrate_threshold(catalog_10k, "partsupp", "ps_image_embedding", q, 200)
        est = estimate_ecqo(idx, VectorRangePredicate("partsupp", "ps_image_embedding", q, cal.threshold))
        assert 0.95 * cal.count <= est.value <= cal.count


def test_ecqo_probe_cache_reuses_result(small):
    idx = small.vector_index("t", "v")
    p = pred(small["t"].values("v")[0], 2.0)
    session = ProbeCache()
    before = idx.search_count
    a = estimate_ecqo(idx, p, session)
    b = estimate_ecqo(idx, pred(small["t"].values("v")[0], 2.0), session)
    assert idx.search_count - before == 1 and session.probes == 1
    assert b.cache is a.cache


def test_ecqo_missing_index(small):
    with pytest.raises(LookupError):
        estimate_ecqo(None, pred(np.zeros(8), 1.0))
    with pytest.raises(LookupError):
        estimate_ecqo(small.vector_index("t", "v"), pred(np.zeros(8), 1.0, rel="u"))


@settings(max_examples=40, deadline=None)
@given(row=st.integers(0, 599), d=st.floats(0.5, 5.0))
def test_ecqo_never_exceeds_oracle(small, row, d):
    q = small["t"].values("v")[row] + np.float32(0.05)
    est = estimate_ecqo(small.vector_index("t", "v"), pred(q, d))
    assert est.value <= len(brute_force_range(small["t"], "v", q, d))


# -- sample size --------------------------------------------------------------------


@pytest.mark.parametrize("p_hat,e,expected", [(0.5, 0.05, 385), (0.5, 0.10, 97), (0.0001, 0.05, 1)])
def test_sample_size_examples(p_hat, e, expected):
    assert compute_sample_size(SamplingParams(1.96, p_hat, e)) == expected


def test_sampling_params_validation():
    with pytest.raises(ValueError):
        SamplingParams(p_hat=1.0)
    with pytest.raises(ValueError):
        SamplingParams(e=0)


# -- sampling -----------------------------------------------------------------------


def test_full_sample_is_exact(small):
    q = small["t"].values("v")[3]
    est = estimate_by_sampling(small["t"], "v", pred(q, 3.0), 10_000, rng_seed=1)
    assert est.value == len(brute_force_range(small["t"], "v", q, 3.0))
    assert est.sample_size == 600


def test_half_matching_dataset():
    vecs = np.zeros((4000, 2), dtype=np.float32)
    vecs[::2, 0] = 10.0
    rel = vector_relation("h", vecs)
    p = VectorRangePredicate("h", "v", np.zeros(2), 1.0)
    vals = [estimate_by_sampling(rel, "v", p, 385, rng_seed=s).value for s in range(20)]
    assert abs(np.mean(vals) - 2000) <= 0.2 * 2000


def test_no_matches_gives_zero(small):
    p = pred(np.full(8, 50.0), 1.0)
    assert {estimate_by_sampling(small["t"], "v", p, 100, rng_seed=s).value for s in range(10)} == {0}


def test_sampling_is_seeded(small):
    p = pred(small["t"].values("v")[1], 3.5)
    a = estimate_by_sampling(small["t"], "v", p, 100, rng_seed=9)
    b = estimate_by_sampling(small["t"], "v", p, 100, rng_seed=9)
    assert a.value == b.value and a.source == "sampling-fixed"
    st_ = EstimatorState.initial("t", "v")
    assert estimate_by_sampling(small["t"], "v", p, st_, rng_seed=9).source == "sampling-adaptive"


# -- Q-error ------------------------------------------------------------------------


def test_q_error_examples():
    assert q_error(100, 100) == 1.0
    assert q_error(200, 50) == 4.0
    assert q_error(0, 0) == 1.0
    assert q_error(0, 10) == 10.0


@given(st.integers(0, 10**9), st.integers(0, 10**9))
def test_q_error_properties(a, b):
    assert q_error(a, b) >= 1.0
    assert q_error(a, b) == q_error(b, a)
    assert q_error(a, a) == 1.0


# -- adaptive controller ------------------------------------------------------------


def fresh(size=385, **hp):
    return EstimatorState("t", "v", size, AdaptiveHyperparams(**hp).eta0, AdaptiveHyperparams(**hp))


def test_fixed_point_at_beta():
    st_ = adapt_sample_size(fresh(), 1.5, HUGE)
    assert st_.sampling_size == 385


def test_q_error_3_5_adds_ten_rows():
    st_ = adapt_sample_size(fresh(), 3.5, HUGE)
    assert st_.momentum == pytest.approx(10.0, abs=1e-6)
    assert st_.sampling_size == 395


def test_perfect_estimates_shrink_sample():
    st_ = adapt_sample_size(fresh(), 1.0, 8000)
    assert st_.momentum < 0 and st_.sampling_size < 385


def test_percent_ratio_scale():
    # at 385 of 8000 rows: fraction 0.048, percent 4.8; delta = 50 * 0.5 - 50 * ratio
    frac = adapt_sample_size(fresh(), 2.0, 8000)
    pct = adapt_sample_size(fresh(ratio_scale="percent"), 2.0, 8000)
    assert frac.sampling_size == 385 + round(0.1 * (25 - 50 * 385 / 8000))
    assert pct.sampling_size == 385 + round(0.1 * (25 - 50 * 100 * 385 / 8000))


def test_learning_rate_decay():
    st_ = fresh()
    for k in range(1, 40):
        adapt_sample_size(st_, 1.5, HUGE)
        assert st_.learning_rate == pytest.approx(0.1 * 0.99**k, rel=1e-12)


def test_clamp_bounds():
    st_ = fresh()
    for _ in range(50):
        adapt_sample_size(st_, 100.0, 2000)
    assert st_.sampling_size == 385  # max(385, 5% of 2000)
    for _ in range(200):
        adapt_sample_size(st_, 1.0, 2000)
    assert st_.sampling_size == 64
    assert AdaptiveHyperparams().bounds(100_000) == (64, 5000)


def test_feedback_cadence():
    st_ = fresh()
    for _ in range(49):
        assert not record_feedback(st_, 100, 10, HUGE)
    assert st_.sampling_size == 385 and st_.updates_applied == 0
    assert record_feedback(st_, 100, 10, HUGE)
    assert st_.updates_applied == 1 and st_.sampling_size > 385
    assert st_.q_error_window == []


def test_constant_perfect_feedback_never_grows():
    st_ = fresh()
    sizes = []
    for _ in range(500):
        record_feedback(st_, 50, 50, 8000)
        sizes.append(st_.sampling_size)
    assert all(b <= a for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] < 385


@settings(max_examples=40, deadline=None)
@given(q=st.floats(1.61, 20.0), updates=st.integers(2, 30))
def test_constant_high_error_grows_until_clamp(q, updates):
    # sizes are integers, so growth needs each momentum step to reach half a row
    st_ = fresh()
    lo, hi = st_.hyperparams.bounds(HUGE)
    prev = st_.sampling_size
    for _ in range(updates):
        adapt_sample_size(st_, q, HUGE)
        assert st_.sampling_size > prev or st_.sampling_size == hi
        prev = st_.sampling_size


@settings(max_examples=40, deadline=None)
@given(q=st.floats(1.0, 1.5), rows=st.integers(1000, 10**7), updates=st.integers(1, 30))
def test_error_at_or_below_beta_never_grows(q, rows, updates):
    st_ = fresh()
    prev = st_.sampling_size
    for _ in range(updates):
        adapt_sample_size(st_, q, rows)
        assert st_.sampling_size <= prev
        prev = st_.sampling_size
        assert len(st_.q_error_window) <= st_.hyperparams.cadence


# -- framework ----------------------------------------------------------------------


def test_framework_routes_estimators(small):
    p = pred(small["t"].values("v")[0], 2.5)
    for kind, source in [("heuristic:vbase", "heuristic"), ("ecqo", "ecqo"),
                         ("sampling:fixed", "sampling-fixed"), ("sampling:adaptive", "sampling-adaptive")]:
        fw = EstimatorFramework(EstimatorConfig(kind))
        assert fw.estimate(small, p).source == source
    assert EstimatorFramework(EstimatorConfig("heuristic:vbase")).estimate(small, p).value == 300
    with pytest.raises(ValueError):
        EstimatorConfig("oracle")


def test_state_is_per_table(small):
    fw = EstimatorFramework(EstimatorConfig("sampling:adaptive"))
    pt, pu = pred(np.zeros(8), 1.0), pred(np.zeros(8), 1.0, rel="u")
    for _ in range(50):
        fw.feedback(small, pt, 100, 10)
    assert fw.state("t", "v").updates_applied == 1
    assert fw.state("u", "v").updates_applied == 0
    assert fw.state("u", "v").sampling_size == 385
    dumped = json.loads(json.dumps(fw.dump_states()))
    assert [d["table"] for d in dumped] == ["t", "u"]


def test_feedback_ignored_for_other_estimators(small):
    fw = EstimatorFramework(EstimatorConfig("sampling:fixed"))
    assert not any(fw.feedback(small, pred(np.zeros(8), 1.0), 100, 1) for _ in range(60))
    assert fw.states == {}
