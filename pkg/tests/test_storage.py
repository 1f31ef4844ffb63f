import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vaqo.storage import (
    Catalog,
    LoadError,
    SchemaError,
    create_relation,
    date_to_days,
    days_to_date,
    load_csv,
    load_fvecs,
    parse_kind,
    read_fvecs,
    vector,
    write_csv,
    write_fvecs,
)


def test_create_relation_empty_two_columns():
    rel = create_relation("t", [("id", "int64"), ("emb", vector(4))])
    assert rel.row_count == 0
    assert [n for n, _ in rel.schema()] == ["id", "emb"]
    assert rel.column("emb").kind.dim == 4


def test_create_relation_duplicate_name():
    with pytest.raises(SchemaError, match="duplicate"):
        create_relation("t", [("a", "int64"), ("a", "float64")])


def test_create_relation_zero_dim():
    with pytest.raises(SchemaError, match="dim"):
        create_relation("t", [("emb", "vector(0)")])


def test_parse_kind_rejects_unknown():
    assert parse_kind("vector(7)").dim == 7
    with pytest.raises(SchemaError):
        parse_kind("decimal")


def test_dates_are_epoch_days():
    assert date_to_days("1970-01-02") == 1
    assert days_to_date(date_to_days("1995-06-17")).isoformat() == "1995-06-17"


def test_load_csv_three_lines(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n3,4\n5,6\n")
    rel = create_relation("t", [("a", "int64"), ("b", "int64")])
    assert load_csv(rel, p) == 3
    assert rel.values("b").tolist() == [2, 4, 6]


def test_load_csv_empty_file(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("")
    rel = create_relation("t", [("a", "int64")])
    assert load_csv(rel, p) == 0
    assert rel.row_count == 0


def test_load_csv_bad_int_reports_line(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n3,x\n")
    rel = create_relation("t", [("a", "int64"), ("b", "int64")])
    with pytest.raises(LoadError, match=r"t\.csv:3"):
        load_csv(rel, p)
    assert rel.row_count == 0


def test_load_csv_arity_and_coverage(tmp_path):
    rel = create_relation("t", [("a", "int64"), ("b", "int64")])
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1\n")
    with pytest.raises(LoadError, match="fields"):
        load_csv(rel, p)
    p.write_text("a\n1\n")
    with pytest.raises(LoadError, match="cover"):
        load_csv(rel, p)


def test_load_csv_mapping_and_vector_literal(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("key,when,e\n7,1995-01-01,\"[1,2]\"\n")
    rel = create_relation("t", [("id", "int64"), ("d", "date"), ("emb", "vector(2)")])
    assert load_csv(rel, p, {"key": "id", "when": "d", "e": "emb"}) == 1
    assert rel.values("emb").tolist() == [[1.0, 2.0]]
    assert rel.values("d")[0] == date_to_days("1995-01-01")


def test_csv_round_trip(tmp_path):
    rel = create_relation("t", [("i", "int64"), ("f", "float64"), ("s", "string"), ("d", "date")])
    rel.append({"i": [1, -2], "f": [0.1, 1e300], "s": ["a b", "c,d"], "d": ["1992-01-01", "1998-12-31"]})
    write_csv(rel, tmp_path / "t.csv")
    back = create_relation("t", rel.schema())
    assert load_csv(back, tmp_path / "t.csv") == 2
    assert back.fingerprint() == rel.fingerprint()


def _fvecs_bytes(vecs):
    n, dim = vecs.shape
    out = np.empty((n, dim + 1), dtype="<f4")
    out[:, 0] = np.full(n, dim, dtype="<i4").view("<f4")
    out[:, 1:] = vecs
    return out.tobytes()


def test_load_fvecs_two_records(tmp_path):
    p = tmp_path / "v.fvecs"
    p.write_bytes(_fvecs_bytes(np.arange(8, dtype=np.float32).reshape(2, 4)))
    rel = create_relation("t", [("emb", "vector(4)")])
    assert load_fvecs(rel, "emb", p) == 2
    assert rel.row_count == 2


def test_load_fvecs_dim_mismatch(tmp_path):
    p = tmp_path / "v.fvecs"
    p.write_bytes(_fvecs_bytes(np.zeros((2, 3), dtype=np.float32)))
    rel = create_relation("t", [("emb", "vector(4)")])
    with pytest.raises(LoadError, match="dim"):
        load_fvecs(rel, "emb", p)


def test_load_fvecs_zero_bytes(tmp_path):
    p = tmp_path / "v.fvecs"
    p.write_bytes(b"")
    rel = create_relation("t", [("emb", "vector(4)")])
    assert load_fvecs(rel, "emb", p) == 0


def test_read_fvecs_truncated(tmp_path):
    p = tmp_path / "v.fvecs"
    p.write_bytes(_fvecs_bytes(np.zeros((2, 4), dtype=np.float32))[:-3])
    with pytest.raises(LoadError, match="truncated"):
        read_fvecs(p)


def test_load_fvecs_rejects_non_finite(tmp_path):
    p = tmp_path / "v.fvecs"
    p.write_bytes(_fvecs_bytes(np.array([[1, np.nan]], dtype=np.float32)))
    rel = create_relation("t", [("emb", "vector(2)")])
    with pytest.raises(SchemaError, match="finite"):
        load_fvecs(rel, "emb", p)


def test_csv_plus_fvecs_is_consistent(tmp_path):
    (tmp_path / "t.csv").write_text("id\n1\n2\n")
    write_fvecs(np.ones((2, 3), dtype=np.float32), tmp_path / "t.fvecs")
    rel = create_relation("t", [("id", "int64"), ("emb", "vector(3)")])
    load_csv(rel, tmp_path / "t.csv")
    assert not rel.is_consistent()
    load_fvecs(rel, "emb", tmp_path / "t.fvecs")
    assert rel.is_consistent() and rel.row_count == 2
    with pytest.raises(LoadError, match="overrun"):
        load_fvecs(rel, "emb", tmp_path / "t.fvecs")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 9)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_fvecs_round_trip_is_byte_identical(tmp_path_factory, vecs):
    d = tmp_path_factory.mktemp("fv")
    raw = _fvecs_bytes(vecs)
    (d / "in.fvecs").write_bytes(raw)
    write_fvecs(read_fvecs(d / "in.fvecs"), d / "out.fvecs")
    assert (d / "out.fvecs").read_bytes() == raw


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(-2**40, 2**40), st.floats(allow_nan=False, allow_infinity=False)),
                max_size=20))
def test_append_keeps_columns_aligned(rows):
    rel = create_relation("t", [("a", "int64"), ("b", "float64")])
    for a, b in rows:
        rel.append({"a": [a], "b": [b]})
    assert rel.is_consistent()
    assert rel.row_count == len(rows) == len(rel.values("a")) == len(rel.values("b"))


def test_ragged_append_rejected():
    rel = create_relation("t", [("a", "int64"), ("b", "int64")])
    with pytest.raises(SchemaError, match="ragged"):
        rel.append({"a": [1, 2], "b": [1]})
    with pytest.raises(SchemaError, match="missing"):
        rel.append({"a": [1]})


def test_catalog_key_index_and_stats():
    cat = Catalog()
    rel = cat.add(create_relation("t", [("k", "int64"), ("x", "float64")]))
    rel.append({"k": [3, 1, 3, 2], "x": [0.5, 1.5, 2.5, 3.5]})
    idx = cat.create_key_index("t", ["k"])
    assert idx.lookup(3) == [0, 2]
    assert idx.lookup(9) == []
    st_ = cat.stats("t", ["k"])
    assert (st_.ndv, st_.min, st_.max) == (3, 1.0, 3.0)
    with pytest.raises(SchemaError):
        cat["missing"]
