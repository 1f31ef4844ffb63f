import numpy as np
import pytest

from vaqo.benchmark import BenchmarkSpec, generate
from vaqo.storage import Catalog, create_relation
from vaqo.vector_index import HnswParams, build_index

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, name: str, detail: str) -> str:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


def index_columns(cat: Catalog, columns=(("partsupp", "ps_image_embedding"),), params: HnswParams | None = None):
    for rel, col in columns:
        cat.vector_indexes[(rel, col)] = build_index(cat[rel], col, params or HnswParams())
    return cat


@pytest.fixture(scope="session")
def tiny_catalog():
    """About 850 rows across the five tables, both vector columns indexed."""
    cat = generate(BenchmarkSpec(scale_factor=0.0001, seed=3))
    return index_columns(cat, [("partsupp", "ps_image_embedding"), ("part", "p_text_embedding")])


@pytest.fixture(scope="session")
def desk_catalog():
    """SF 0.01 (8000 partsupp rows), image embeddings indexed."""
    return index_columns(generate(BenchmarkSpec(scale_factor=0.01, seed=42)))


@pytest.fixture(scope="session")
def desk_catalog_unindexed():
    return generate(BenchmarkSpec(scale_factor=0.01, seed=42))


@pytest.fixture(scope="session")
def catalog_10k():
    """10k-row gaussian-clustered partsupp, seed 42, indexed."""
    cat = generate(BenchmarkSpec(scale_factor=0.0125, seed=42))
    assert cat["partsupp"].row_count == 10_000
    return index_columns(cat)


def vector_relation(name: str, vecs: np.ndarray, column: str = "v"):
    rel = create_relation(name, [("id", "int64"), (column, f"vector({vecs.shape[1]})")])
    rel.append({"id": np.arange(len(vecs)), column: vecs})
    return rel


@pytest.fixture
def make_vector_relation():
    return vector_relation
