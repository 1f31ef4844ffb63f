"""Synthetic five-table analytical schema with embedding columns on partsupp and part."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..storage import (
    DATE,
    FLOAT64,
    INT64,
    STRING,
    Catalog,
    LoadError,
    create_relation,
    date_to_days,
    load_csv,
    load_fvecs,
    vector,
    write_csv,
    write_fvecs,
)

DISTRIBUTIONS = ("gaussian-clustered", "skewed-lognormal-clustered", "uniform")
TABLES = ("part", "supplier", "partsupp", "orders", "lineitem")

_TYPES = [f"{a} {b} {c}" for a in ("STANDARD", "SMALL", "MEDIUM", "LARGE", "ECONOMY", "PROMO")
          for b in ("ANODIZED", "BURNISHED", "PLATED", "POLISHED", "BRUSHED")
          for c in ("TIN", "NICKEL", "BRASS", "STEEL", "COPPER")]
_CONTAINERS = [f"{a} {b}" for a in ("SM", "LG", "MED", "JUMBO", "WRAP")
               for b in ("CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM")]
_PRIORITIES = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"]
_SHIPMODES = ["REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB"]
_START = date_to_days("1992-01-01")
_END = date_to_days("1998-08-02")
_CURRENT = date_to_days("1995-06-17")


@dataclass(frozen=True)
class BenchmarkSpec:
    scale_factor: float = 0.01
    vector_dim: int = 96
    text_dim: int = 32
    distribution: str = "gaussian-clustered"
    n_clusters: int = 8
    n_tags: int = 24
    seed: int = 42

    def __post_init__(self):
        if not self.scale_factor > 0:
            raise ValueError("scale_factor must be > 0")
        if self.vector_dim < 1 or self.text_dim < 1:
            raise ValueError("vector dimensions must be >= 1")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {', '.join(DISTRIBUTIONS)}")
        if self.n_clusters < 1 or self.n_tags < 1:
            raise ValueError("n_clusters and n_tags must be >= 1")

    @property
    def n_part(self) -> int:
        return max(1, round(200_000 * self.scale_factor))

    @property
    def n_supplier(self) -> int:
        return max(4, round(10_000 * self.scale_factor))

    @property
    def n_partsupp(self) -> int:
        return 4 * self.n_part

    @property
    def n_orders(self) -> int:
        return max(1, round(1_500_000 * self.scale_factor))

    def to_json(self) -> dict:
        return asdict(self)


def _cluster_vectors(rng: np.random.Generator, n: int, dim: int, spec: BenchmarkSpec,
                     centers: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = spec.n_clusters
    if spec.distribution == "uniform":
        vecs = rng.uniform(-1.0, 1.0, size=(n, dim))
        if centers is None:
            centers = rng.uniform(-1.0, 1.0, size=(k, dim))
        d = ((vecs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2) if n * k * dim < 5e7 else None
        labels = np.argmin(d, axis=1) if d is not None else np.array(
            [int(np.argmin(((centers - v) ** 2).sum(axis=1))) for v in vecs])
        return vecs.astype(np.float32), labels, centers
    if centers is None:
        centers = rng.normal(0.0, 3.0, size=(k, dim))
    if spec.distribution == "gaussian-clustered":
        labels = rng.integers(0, k, size=n)
        vecs = centers[labels] + rng.normal(0.0, 1.0, size=(n, dim))
    else:
        weights = 1.0 / np.arange(1, k + 1) ** 1.2
        labels = rng.choice(k, size=n, p=weights / weights.sum())
        spread = rng.lognormal(0.0, 0.5, size=k)
        noise = rng.lognormal(0.0, 0.6, size=(n, dim)) - np.exp(0.18)
        vecs = centers[labels] + noise * spread[labels, None]
    return vecs.astype(np.float32), labels, centers


def _zipf_tags(rng: np.random.Generator, labels: np.ndarray, n_tags: int) -> np.ndarray:
    """Tag rank follows a Zipf law; the rank is offset by cluster so tags correlate with clusters."""
    ranks = np.minimum(rng.zipf(1.6, size=len(labels)) - 1, n_tags - 1)
    ids = (labels * 3 + ranks) % n_tags
    return np.array([f"tag{i:02d}" for i in ids], dtype=object)


def generate(spec: BenchmarkSpec) -> Catalog:
    """Build the populated catalog.  Same spec, same bytes."""
    rng = np.random.default_rng(spec.seed)
    cat = Catalog()
    n_part, n_supp, n_ord = spec.n_part, spec.n_supplier, spec.n_orders

    # part
    partkey = np.arange(1, n_part + 1, dtype=np.int64)
    p_text, _, _ = _cluster_vectors(np.random.default_rng([spec.seed, 1]), n_part, spec.text_dim, spec)
    part = create_relation("part", [
        ("p_partkey", INT64), ("p_brand", STRING), ("p_type", STRING), ("p_size", INT64),
        ("p_container", STRING), ("p_retailprice", FLOAT64), ("p_text_embedding", vector(spec.text_dim)),
    ])
    retail = (90000 + ((partkey // 10) % 20001) + 100 * (partkey % 1000)) / 100.0
    part.append({
        "p_partkey": partkey,
        "p_brand": [f"Brand#{a}{b}" for a, b in zip(rng.integers(1, 6, n_part), rng.integers(1, 6, n_part))],
        "p_type": [_TYPES[i] for i in rng.integers(0, len(_TYPES), n_part)],
        "p_size": rng.integers(1, 51, n_part),
        "p_container": [_CONTAINERS[i] for i in rng.integers(0, len(_CONTAINERS), n_part)],
        "p_retailprice": retail,
        "p_text_embedding": p_text,
    })
    cat.add(part)

    # supplier
    suppkey = np.arange(1, n_supp + 1, dtype=np.int64)
    supplier = create_relation("supplier", [
        ("s_suppkey", INT64), ("s_name", STRING), ("s_nationkey", INT64), ("s_acctbal", FLOAT64),
    ])
    supplier.append({
        "s_suppkey": suppkey,
        "s_name": [f"Supplier#{k:09d}" for k in suppkey],
        "s_nationkey": rng.integers(0, 25, n_supp),
        "s_acctbal": np.round(rng.uniform(-999.99, 9999.99, n_supp), 2),
    })
    cat.add(supplier)

    # partsupp: four suppliers per part, spread as in the classic generator
    ps_part = np.repeat(partkey, 4)
    j = np.tile(np.arange(4, dtype=np.int64), n_part)
    ps_supp = (ps_part - 1 + j * (n_supp // 4 + (ps_part - 1) // n_supp)) % n_supp + 1
    n_ps = len(ps_part)
    img, labels, centers = _cluster_vectors(np.random.default_rng([spec.seed, 2]), n_ps, spec.vector_dim, spec)
    # the text embedding shares cluster ids with the image one through a fixed projection
    proj = np.random.default_rng([spec.seed, 3]).normal(0.0, 1.0 / np.sqrt(spec.vector_dim),
                                                         size=(spec.vector_dim, spec.text_dim))
    txt = (img.astype(np.float64) @ proj).astype(np.float32)
    partsupp = create_relation("partsupp", [
        ("ps_partkey", INT64), ("ps_suppkey", INT64), ("ps_availqty", INT64), ("ps_supplycost", FLOAT64),
        ("ps_image_embedding", vector(spec.vector_dim)), ("ps_text_embedding", vector(spec.text_dim)),
        ("ps_tag", STRING),
    ])
    partsupp.append({
        "ps_partkey": ps_part,
        "ps_suppkey": ps_supp,
        "ps_availqty": rng.integers(1, 10_000, n_ps),
        "ps_supplycost": np.round(rng.uniform(1.0, 1000.0, n_ps), 2),
        "ps_image_embedding": img,
        "ps_text_embedding": txt,
        "ps_tag": _zipf_tags(np.random.default_rng([spec.seed, 4]), labels, spec.n_tags),
    })
    cat.add(partsupp)

    # orders
    orderkey = np.arange(1, n_ord + 1, dtype=np.int64)
    odate = rng.integers(_START, _END - 151 + 1, n_ord)
    orders = create_relation("orders", [
        ("o_orderkey", INT64), ("o_custkey", INT64), ("o_orderstatus", STRING), ("o_totalprice", FLOAT64),
        ("o_orderdate", DATE), ("o_orderpriority", STRING), ("o_shippriority", INT64),
    ])

    # lineitem: 1..7 lines per order, and every partsupp row appears at least once
    lines = rng.integers(1, 8, n_ord)
    n_li = int(lines.sum())
    if n_li < n_ps:
        extra = np.zeros(n_ord, dtype=np.int64)
        np.add.at(extra, rng.integers(0, n_ord, n_ps - n_li), 1)
        lines = lines + extra
        n_li = int(lines.sum())
    l_order = np.repeat(orderkey, lines)
    l_linenumber = np.arange(n_li) - np.repeat(np.cumsum(lines) - lines, lines) + 1
    ps_pick = np.concatenate([rng.permutation(n_ps), rng.integers(0, n_ps, n_li - n_ps)])
    ps_pick = ps_pick[rng.permutation(n_li)]
    l_part = ps_part[ps_pick]
    l_supp = ps_supp[ps_pick]
    qty = rng.integers(1, 51, n_li)
    ext = np.round(qty * retail[l_part - 1], 2)
    disc = rng.integers(0, 11, n_li) / 100.0
    tax = rng.integers(0, 9, n_li) / 100.0
    l_odate = odate[l_order - 1]
    ship = l_odate + rng.integers(1, 122, n_li)
    commit = l_odate + rng.integers(30, 91, n_li)
    receipt = ship + rng.integers(1, 31, n_li)
    rflag = np.where(receipt <= _CURRENT, np.where(rng.random(n_li) < 0.5, "R", "A"), "N")
    shipped = ship <= _CURRENT
    status_f = np.zeros(n_ord, dtype=np.int64)
    np.add.at(status_f, l_order - 1, shipped.astype(np.int64))
    status = np.where(status_f == lines, "F", np.where(status_f == 0, "O", "P"))
    total = np.zeros(n_ord)
    np.add.at(total, l_order - 1, ext * (1 + tax) * (1 - disc))

    orders.append({
        "o_orderkey": orderkey,
        "o_custkey": rng.integers(1, max(2, round(150_000 * spec.scale_factor)) + 1, n_ord),
        "o_orderstatus": status,
        "o_totalprice": np.round(total, 2),
        "o_orderdate": odate,
        "o_orderpriority": [_PRIORITIES[i] for i in rng.integers(0, 5, n_ord)],
        "o_shippriority": np.zeros(n_ord, dtype=np.int64),
    })
    cat.add(orders)

    lineitem = create_relation("lineitem", [
        ("l_orderkey", INT64), ("l_partkey", INT64), ("l_suppkey", INT64), ("l_linenumber", INT64),
        ("l_quantity", INT64), ("l_extendedprice", FLOAT64), ("l_discount", FLOAT64), ("l_tax", FLOAT64),
        ("l_returnflag", STRING), ("l_shipdate", DATE), ("l_commitdate", DATE), ("l_receiptdate", DATE),
        ("l_shipmode", STRING),
    ])
    lineitem.append({
        "l_orderkey": l_order, "l_partkey": l_part, "l_suppkey": l_supp, "l_linenumber": l_linenumber,
        "l_quantity": qty, "l_extendedprice": ext, "l_discount": disc, "l_tax": tax,
        "l_returnflag": rflag, "l_shipdate": ship, "l_commitdate": commit, "l_receiptdate": receipt,
        "l_shipmode": [_SHIPMODES[i] for i in rng.integers(0, len(_SHIPMODES), n_li)],
    })
    cat.add(lineitem)
    create_key_indexes(cat)
    cat.manifest_hash = catalog_hash(cat)
    return cat


KEY_INDEXES = [
    ("part", ("p_partkey",)),
    ("supplier", ("s_suppkey",)),
    ("partsupp", ("ps_partkey", "ps_suppkey")),
    ("partsupp", ("ps_partkey",)),
    ("partsupp", ("ps_suppkey",)),
    ("orders", ("o_orderkey",)),
    ("lineitem", ("l_orderkey",)),
    ("lineitem", ("l_partkey", "l_suppkey")),
]


def create_key_indexes(cat: Catalog) -> None:
    for rel, cols in KEY_INDEXES:
        if rel in cat:
            cat.create_key_index(rel, cols)


def catalog_hash(cat: Catalog) -> str:
    h = hashlib.sha256()
    for name in sorted(cat.relations):
        h.update(name.encode())
        h.update(cat[name].fingerprint().encode())
    return h.hexdigest()


# -- export / import --------------------------------------------------------------

MANIFEST = "manifest.json"


def export_catalog(cat: Catalog, directory: str | Path, spec: BenchmarkSpec | None = None) -> dict:
    """Write one CSV per table (scalar columns), one fvecs file per vector column, and a manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tables = []
    for name in sorted(cat.relations):
        rel = cat[name]
        write_csv(rel, out / f"{name}.csv")
        vec_files = {}
        for col_name, kind in rel.schema():
            if kind.is_vector:
                fname = f"{name}.{col_name}.fvecs"
                write_fvecs(rel.values(col_name), out / fname)
                vec_files[col_name] = fname
        tables.append({
            "name": name,
            "rows": rel.row_count,
            "schema": [[c, str(k)] for c, k in rel.schema()],
            "csv": f"{name}.csv",
            "fvecs": vec_files,
            "fingerprint": rel.fingerprint(),
        })
    manifest = {
        "format": 1,
        "spec": spec.to_json() if spec else None,
        "tables": tables,
        "key_indexes": [[r, list(c)] for r, c in KEY_INDEXES if r in cat],
        "manifest_hash": catalog_hash(cat),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def import_catalog(directory: str | Path) -> Catalog:
    src = Path(directory)
    mpath = src / MANIFEST
    if not mpath.exists():
        raise LoadError(f"{src}: no {MANIFEST}; not a catalog directory")
    manifest = json.loads(mpath.read_text())
    cat = Catalog()
    for t in manifest["tables"]:
        rel = create_relation(t["name"], [tuple(x) for x in t["schema"]])
        load_csv(rel, src / t["csv"])
        for col, fname in t["fvecs"].items():
            load_fvecs(rel, col, src / fname)
        if not rel.is_consistent():
            raise LoadError(f"{src}: table {t['name']!r} has columns of different lengths after loading")
        cat.add(rel)
    for rel, cols in manifest.get("key_indexes", []):
        cat.create_key_index(rel, cols)
    cat.manifest_hash = catalog_hash(cat)
    if cat.manifest_hash != manifest["manifest_hash"]:
        raise LoadError(f"{src}: data does not match manifest hash")
    return cat
