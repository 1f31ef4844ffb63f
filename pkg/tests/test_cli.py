import csv
import json
import shutil
import subprocess

import pytest

from vaqo.cli import main


def run_cli(*argv, env=None):
    return main([str(a) for a in argv], environ=env or {})


@pytest.fixture(scope="module")
def cat_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cat")
    assert run_cli("gen", "--sf", "0.0001", "--seed", "3", "-o", d) == 0
    assert run_cli("index", d, "--column", "partsupp.ps_image_embedding",
                   "--column", "part.p_text_embedding", "--m", "8", "--ef-construction", "32") == 0
    return d


@pytest.fixture(scope="module")
def adaptive_run(cat_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("adaptive")
    assert run_cli("run", cat_dir, "--templates", "q11", "--queries", "200", "--target", "0.3", "--reps", "1",
                   "--estimator", "sampling:adaptive", "--no-index", "-o", out) == 0
    return out


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def read_trace(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_manifest_and_determinism(tmp_path, cat_dir):
    m = manifest(cat_dir)
    assert sorted(t["name"] for t in m["tables"]) == ["lineitem", "orders", "part", "partsupp", "supplier"]
    assert run_cli("gen", "--sf", "0.0001", "--seed", "3", "-o", tmp_path) == 0
    assert manifest(tmp_path)["manifest_hash"] == m["manifest_hash"]


def test_gen_rejects_zero_scale(tmp_path, capsys):
    assert run_cli("gen", "--sf", "0", "-o", tmp_path) == 2
    assert "sf" in capsys.readouterr().err


def test_env_overrides(tmp_path, cat_dir):
    env = {"VAQO_SF": "0.0001", "VAQO_SEED": "3", "VAQO_OUT": str(tmp_path / "a")}
    assert run_cli("gen", env=env) == 0
    assert manifest(tmp_path / "a")["manifest_hash"] == manifest(cat_dir)["manifest_hash"]
    env["VAQO_SEED"] = "4"
    env["VAQO_OUT"] = str(tmp_path / "b")
    assert run_cli("gen", env=env) == 0
    assert manifest(tmp_path / "b")["manifest_hash"] != manifest(cat_dir)["manifest_hash"]
    # flags beat the environment
    assert run_cli("gen", "--seed", "3", "-o", tmp_path / "c", env=env) == 0
    assert manifest(tmp_path / "c")["manifest_hash"] == manifest(cat_dir)["manifest_hash"]
    assert run_cli("gen", env={"VAQO_SF": "zero", "VAQO_OUT": str(tmp_path)}) == 2


def test_run_ecqo_single_probe(cat_dir, tmp_path):
    assert run_cli("run", cat_dir, "--templates", "q3,q9", "--queries", "2", "--target", "0.3", "--reps", "3",
                   "--estimator", "ecqo", "-o", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["manifest_hash"] == manifest(cat_dir)["manifest_hash"]
    assert rep["configs"]["ecqo"]["hnsw"] == {"M": 16, "ef_construction": 200, "ef_search": 400, "seed": 0}
    assert len(rep["records"]) == 4
    assert all(r["ann_probe_count"] == 0 and r["index_searches"] == 1 for r in rep["records"])
    assert len(list((tmp_path / "explain").glob("*.json"))) == 4
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and set(rows[0]) >= {"template", "config", "latency_ms", "est_card", "true_card",
                                                "q_error", "sample_size", "plan_hash"}


def test_run_duckdb_estimates_whole_table(cat_dir, tmp_path):
    assert run_cli("run", cat_dir, "--templates", "q3", "--queries", "2", "--target", "0.3", "--reps", "1",
                   "--estimator", "heuristic:duckdb", "-o", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    rows = next(t["rows"] for t in manifest(cat_dir)["tables"] if t["name"] == "partsupp")
    assert all(r["vector_scan_est_rows"] == rows for r in rep["records"])


def test_run_unknown_template(cat_dir, tmp_path, capsys):
    assert run_cli("run", cat_dir, "--templates", "q3,q42", "-o", tmp_path) == 2
    err = capsys.readouterr().err
    assert "q42" in err and "q20" in err and "ds98" in err


def test_run_ecqo_without_index(tmp_path, capsys):
    d = tmp_path / "cat"
    assert run_cli("gen", "--sf", "0.0001", "-o", d) == 0
    assert run_cli("run", d, "--estimator", "ecqo", "--target", "0.3", "-o", tmp_path / "r") == 3
    assert "vaqo index" in capsys.readouterr().err


def test_run_bad_target(cat_dir, tmp_path):
    assert run_cli("run", cat_dir, "--target", "150%", "-o", tmp_path) == 2
    assert run_cli("run", cat_dir, "--target", "1000000", "-o", tmp_path) == 3


def test_missing_catalog(tmp_path):
    assert run_cli("run", tmp_path / "nope", "-o", tmp_path / "r") == 3


def test_compare_self_and_mismatch(cat_dir, tmp_path, capsys):
    a = tmp_path / "a"
    assert run_cli("run", cat_dir, "--templates", "q3", "--queries", "2", "--target", "0.3", "--reps", "3",
                   "--estimator", "heuristic:duckdb", "--estimator", "ecqo", "-o", a) == 0
    capsys.readouterr()
    assert run_cli("compare", a / "report.json", a / "report.json", "-o", tmp_path / "cmp.csv") == 0
    with open(tmp_path / "cmp.csv") as fh:
        rows = list(csv.DictReader(fh))
    self_rows = [r for r in rows if r["baseline"] == r["candidate"]]
    assert self_rows and all(float(r["speedup"]) == 1.0 for r in self_rows)

    other = tmp_path / "other"
    assert run_cli("gen", "--sf", "0.0001", "--seed", "4", "-o", other) == 0
    assert run_cli("run", other, "--templates", "q3", "--target", "0.3", "--reps", "1", "-o", tmp_path / "b") == 0
    capsys.readouterr()
    assert run_cli("compare", a / "report.json", tmp_path / "b" / "report.json") == 3
    assert "different catalogs" in capsys.readouterr().err


def test_trace_sampler_cadence(adaptive_run, tmp_path):
    assert run_cli("trace-sampler", adaptive_run / "report.json", "-o", tmp_path / "t.csv") == 0
    rows = read_trace(tmp_path / "t.csv")
    sizes = [int(r["sample_size"]) for r in rows]
    assert len(rows) == 200
    assert len(set(sizes[:49])) == 1 and len(set(sizes[:50])) == 1
    assert len(set(sizes)) <= 4
    # sample size only moves at cadence boundaries
    assert all(sizes[i] == sizes[i - 1] for i in range(1, 200) if i % 50)


def test_trace_sampler_perfect_estimates_never_grow(adaptive_run, tmp_path):
    # a 385-row sample covers the whole 80-row table, so every estimate is exact;
    # the trace reports rows actually sampled, capped at the table size
    run_cli("trace-sampler", adaptive_run / "report.json", "-o", tmp_path / "t.csv")
    rows = read_trace(tmp_path / "t.csv")
    assert {float(r["q_error"]) for r in rows} == {1.0}
    sizes = [int(r["sample_size"]) for r in rows]
    assert all(b <= a for a, b in zip(sizes, sizes[1:]))


def test_trace_sampler_49_queries(cat_dir, tmp_path, capsys):
    assert run_cli("run", cat_dir, "--templates", "q3", "--queries", "49", "--target", "0.3", "--reps", "1",
                   "--estimator", "sampling:adaptive", "-o", tmp_path) == 0
    capsys.readouterr()
    assert run_cli("trace-sampler", tmp_path / "report.json") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 50
    assert len({ln.split(",")[1] for ln in lines[1:]}) == 1


def test_trace_sampler_wrong_estimator(cat_dir, tmp_path):
    assert run_cli("run", cat_dir, "--target", "0.3", "--reps", "1", "-o", tmp_path) == 0
    assert run_cli("trace-sampler", tmp_path / "report.json") == 3


def test_report_writes_figures(adaptive_run, tmp_path):
    assert run_cli("report", adaptive_run / "report.json", "-o", tmp_path) == 0
    for name in ("summary.csv", "latency.png", "q_error.png",
                 "sampler_sampling_adaptive.csv", "sampler_sampling_adaptive.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert (tmp_path / "latency.png").read_bytes()[:4] == b"\x89PNG"


def test_report_rejects_bad_schema(tmp_path):
    (tmp_path / "r.json").write_text(json.dumps({"schema_version": 0}))
    assert run_cli("report", tmp_path / "r.json", "-o", tmp_path / "o") == 3


@pytest.mark.skipif(shutil.which("vaqo") is None, reason="console script not installed")
def test_console_script(tmp_path):
    out = subprocess.run(["vaqo", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("vaqo ")
    bad = subprocess.run(["vaqo", "frobnicate"], capture_output=True, text=True)
    assert bad.returncode == 2
