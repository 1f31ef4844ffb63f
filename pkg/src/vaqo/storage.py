"""In-memory columnar relations and bulk loaders (CSV for scalars, fvecs for vectors)."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

_EPOCH = _dt.date(1970, 1, 1).toordinal()


class SchemaError(ValueError):
    pass


class LoadError(ValueError):
    pass


@dataclass(frozen=True)
class Kind:
    name: str
    dim: int = 0

    def __str__(self) -> str:
        return f"vector({self.dim})" if self.name == "vector" else self.name

    @property
    def is_vector(self) -> bool:
        return self.name == "vector"


INT64 = Kind("int64")
FLOAT64 = Kind("float64")
STRING = Kind("string")
DATE = Kind("date")
_SCALARS = {k.name: k for k in (INT64, FLOAT64, STRING, DATE)}
_VECTOR_RE = re.compile(r"^vector\((-?\d+)\)$")


def vector(dim: int) -> Kind:
    return Kind("vector", dim)


def parse_kind(text: str | Kind) -> Kind:
    if isinstance(text, Kind):
        return text
    text = text.strip()
    if text in _SCALARS:
        return _SCALARS[text]
    m = _VECTOR_RE.match(text)
    if m:
        return vector(int(m.group(1)))
    raise SchemaError(f"unknown column kind {text!r}")


def date_to_days(value: str | _dt.date) -> int:
    if isinstance(value, str):
        value = _dt.date.fromisoformat(value.strip())
    return value.toordinal() - _EPOCH


def days_to_date(days: int) -> _dt.date:
    return _dt.date.fromordinal(int(days) + _EPOCH)


def _empty(kind: Kind) -> np.ndarray:
    if kind.is_vector:
        return np.empty((0, kind.dim), dtype=np.float32)
    if kind.name == "float64":
        return np.empty(0, dtype=np.float64)
    if kind.name == "string":
        return np.empty(0, dtype=object)
    if kind.name == "date":
        return np.empty(0, dtype=np.int32)
    return np.empty(0, dtype=np.int64)


def coerce(kind: Kind, values) -> np.ndarray:
    """Convert ``values`` to the packed array layout used for ``kind``."""
    if kind.is_vector:
        arr = np.asarray(values, dtype=np.float32)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, kind.dim)
        if arr.ndim != 2 or arr.shape[1] != kind.dim:
            raise SchemaError(f"expected vectors of dim {kind.dim}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError("vector values must be finite")
        return np.ascontiguousarray(arr)
    if kind.name == "string":
        arr = np.empty(len(values), dtype=object)
        arr[:] = [str(v) for v in values]
        return arr
    if kind.name == "date":
        vals = [date_to_days(v) if isinstance(v, (str, _dt.date)) else int(v) for v in values]
        return np.asarray(vals, dtype=np.int32)
    if kind.name == "float64":
        return np.asarray(values, dtype=np.float64)
    return np.asarray(values, dtype=np.int64)


class Column:
    """A named, typed, append-only column.  Appends are buffered and packed lazily."""

    def __init__(self, name: str, kind: Kind):
        self.name = name
        self.kind = kind
        self._packed = _empty(kind)
        self._chunks: list[np.ndarray] = []

    @property
    def values(self) -> np.ndarray:
        if self._chunks:
            self._packed = np.concatenate([self._packed, *self._chunks])
            self._chunks = []
        return self._packed

    def __len__(self) -> int:
        return len(self._packed) + sum(len(c) for c in self._chunks)

    def append(self, values) -> int:
        arr = coerce(self.kind, values)
        if len(arr):
            self._chunks.append(arr)
        return len(arr)


class Relation:
    """Append-only columnar table.

    ``row_count`` is the number of complete rows.  A CSV load may leave vector
    columns short until the matching fvecs files are loaded; :meth:`is_consistent`
    reports whether every column has the same length.
    """

    def __init__(self, name: str, columns: Sequence[Column]):
        self.name = name
        self.columns: dict[str, Column] = {c.name: c for c in columns}

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return min(len(c) for c in self.columns.values())

    def __len__(self) -> int:
        return self.row_count

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def column(self, name: str) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"relation {self.name!r} has no column {name!r}") from None

    def values(self, name: str) -> np.ndarray:
        return self.column(name).values

    def schema(self) -> list[tuple[str, Kind]]:
        return [(c.name, c.kind) for c in self.columns.values()]

    def is_consistent(self) -> bool:
        return len({len(c) for c in self.columns.values()}) <= 1

    def append(self, data: Mapping[str, object]) -> int:
        """Append whole rows; ``data`` must cover every column."""
        missing = set(self.columns) - set(data)
        if missing:
            raise SchemaError(f"append to {self.name!r} missing columns {sorted(missing)}")
        packed = {k: coerce(self.columns[k].kind, v) for k, v in data.items()}
        lengths = {len(v) for v in packed.values()}
        if len(lengths) > 1:
            raise SchemaError(f"ragged append to {self.name!r}: lengths {sorted(lengths)}")
        for k, v in packed.items():
            self.columns[k].append(v)
        return lengths.pop() if lengths else 0

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.name.encode())
        for col in self.columns.values():
            h.update(f"{col.name}:{col.kind}".encode())
            vals = col.values
            if col.kind.name == "string":
                h.update("\x1f".join(vals.tolist()).encode())
            else:
                h.update(np.ascontiguousarray(vals).tobytes())
        return h.hexdigest()


def create_relation(name: str, schema: Sequence[tuple[str, Kind | str]]) -> Relation:
    if not schema:
        raise SchemaError("schema must not be empty")
    cols = []
    seen = set()
    for col_name, kind in schema:
        kind = parse_kind(kind)
        if col_name in seen:
            raise SchemaError(f"duplicate column name {col_name!r}")
        if kind.is_vector and kind.dim < 1:
            raise SchemaError(f"invalid vector dim {kind.dim} for column {col_name!r}")
        seen.add(col_name)
        cols.append(Column(col_name, kind))
    return Relation(name, cols)


# -- CSV ------------------------------------------------------------------------


def _parse_field(kind: Kind, text: str):
    if kind.name == "int64":
        return int(text)
    if kind.name == "float64":
        return float(text)
    if kind.name == "date":
        return date_to_days(text) if "-" in text else int(text)
    if kind.name == "string":
        return text
    # pgvector text form: [1,2,3]
    body = text.strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ValueError(f"vector literal must be bracketed, got {text!r}")
    comps = [float(x) for x in body[1:-1].split(",") if x.strip()]
    if len(comps) != kind.dim:
        raise ValueError(f"vector literal has {len(comps)} components, expected {kind.dim}")
    return comps


def load_csv(relation: Relation, path: str | Path, column_mapping: Mapping[str, str] | None = None) -> int:
    """Append rows from a headered CSV file.

    ``column_mapping`` maps CSV header names to relation column names; by
    default headers must match column names.  Every scalar column has to be
    covered.  Vector columns may be supplied inline as ``[x,y,...]`` literals
    or loaded separately with :func:`load_fvecs`.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return 0
        mapping = dict(column_mapping) if column_mapping else {h: h for h in header}
        targets = []
        for h in header:
            if h not in mapping:
                targets.append(None)
                continue
            targets.append(relation.column(mapping[h]))
        covered = {c.name for c in targets if c is not None}
        missing = [c.name for c in relation.columns.values() if not c.kind.is_vector and c.name not in covered]
        if missing:
            raise LoadError(f"{path}: CSV does not cover scalar columns {missing}")
        staged: dict[str, list] = {name: [] for name in covered}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LoadError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for col, text in zip(targets, row):
                if col is None:
                    continue
                try:
                    staged[col.name].append(_parse_field(col.kind, text))
                except ValueError as exc:
                    raise LoadError(f"{path}:{lineno}: column {col.name!r}: {exc}") from None
    n = len(next(iter(staged.values()))) if staged else 0
    for name, vals in staged.items():
        col = relation.columns[name]
        if col.kind.is_vector:
            col.append(np.asarray(vals, dtype=np.float32).reshape(-1, col.kind.dim))
        else:
            col.append(vals)
    return n


def write_csv(relation: Relation, path: str | Path, include_vectors: bool = False) -> None:
    cols = [c for c in relation.columns.values() if include_vectors or not c.kind.is_vector]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c.name for c in cols])
        data = [c.values for c in cols]
        for i in range(relation.row_count):
            row = []
            for c, vals in zip(cols, data):
                v = vals[i]
                if c.kind.name == "date":
                    row.append(days_to_date(v).isoformat())
                elif c.kind.is_vector:
                    row.append("[" + ",".join(repr(float(x)) for x in v) + "]")
                elif c.kind.name == "float64":
                    row.append(repr(float(v)))
                else:
                    row.append(v)
            w.writerow(row)


# -- fvecs ----------------------------------------------------------------------


def read_fvecs(path: str | Path) -> np.ndarray:
    """Read a whole fvecs file: records of [int32 dim][dim x float32], little endian."""
    raw = Path(path).read_bytes()
    if not raw:
        return np.empty((0, 0), dtype=np.float32)
    if len(raw) < 4:
        raise LoadError(f"{path}: truncated record header")
    dim = int(np.frombuffer(raw[:4], dtype="<i4")[0])
    if dim < 1:
        raise LoadError(f"{path}: invalid record dim {dim}")
    rec = 4 * (dim + 1)
    n_full = len(raw) // rec
    body = np.frombuffer(raw[: n_full * rec], dtype="<i4").reshape(n_full, dim + 1)
    dims = body[:, 0]
    bad = np.nonzero(dims != dim)[0]
    if len(bad):
        raise LoadError(f"{path}: record {int(bad[0])} has dim {int(dims[bad[0]])}, expected {dim}")
    if len(raw) % rec:
        raise LoadError(f"{path}: truncated record {n_full}")
    return body[:, 1:].copy().view("<f4").astype(np.float32)


def write_fvecs(vectors: np.ndarray, path: str | Path) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    n, dim = vectors.shape
    out = np.empty((n, dim + 1), dtype="<f4")
    out[:, 0] = np.full(n, dim, dtype="<i4").view("<f4")
    out[:, 1:] = vectors
    Path(path).write_bytes(out.tobytes())


def load_fvecs(relation: Relation, column: str, path: str | Path) -> int:
    """Append one vector per fvecs record to ``column``, in file order."""
    col = relation.column(column)
    if not col.kind.is_vector:
        raise SchemaError(f"column {column!r} is {col.kind}, not a vector column")
    raw = Path(path).read_bytes()
    if raw:
        head = int(np.frombuffer(raw[:4], dtype="<i4")[0]) if len(raw) >= 4 else -1
        if head != col.kind.dim and head > 0:
            raise LoadError(f"{path}: record 0 has dim {head}, column {column!r} is {col.kind}")
    vecs = read_fvecs(path)
    if len(vecs) == 0:
        return 0
    others = [c for c in relation.columns.values() if c is not col]
    if others and len(col) + len(vecs) > max(len(c) for c in others):
        raise LoadError(
            f"{path}: {len(vecs)} vectors would overrun the {max(len(c) for c in others)} rows of {relation.name!r}"
        )
    return col.append(vecs)


# -- catalog --------------------------------------------------------------------


class KeyIndex:
    """Hash index from an equi-join key (scalar or tuple) to ascending row ids."""

    def __init__(self, relation: Relation, columns: Sequence[str]):
        self.relation = relation.name
        self.columns = tuple(columns)
        arrays = [relation.values(c).tolist() for c in columns]
        keys: Iterable = arrays[0] if len(arrays) == 1 else zip(*arrays)
        table: dict = {}
        for rid, key in enumerate(keys):
            bucket = table.get(key)
            if bucket is None:
                table[key] = [rid]
            else:
                bucket.append(rid)
        self.table = table

    def lookup(self, key) -> list[int]:
        return self.table.get(key, [])

    @property
    def distinct(self) -> int:
        return len(self.table)


@dataclass
class ColumnStats:
    ndv: int
    min: float | None = None
    max: float | None = None


@dataclass
class Catalog:
    relations: dict[str, Relation] = field(default_factory=dict)
    vector_indexes: dict[tuple[str, str], object] = field(default_factory=dict)
    key_indexes: dict[tuple[str, tuple[str, ...]], KeyIndex] = field(default_factory=dict)
    _stats: dict[tuple[str, tuple[str, ...]], ColumnStats] = field(default_factory=dict, repr=False)
    manifest_hash: str | None = None

    def add(self, relation: Relation) -> Relation:
        if not relation.is_consistent():
            raise SchemaError(f"relation {relation.name!r} has ragged columns")
        self.relations[relation.name] = relation
        return relation

    def __getitem__(self, name: str) -> Relation:
        try:
            return self.relations[name]
        except KeyError:
            raise SchemaError(f"unknown relation {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.relations

    def create_key_index(self, relation: str, columns: Sequence[str]) -> KeyIndex:
        key = (relation, tuple(sorted(columns)))
        if key not in self.key_indexes:
            self.key_indexes[key] = KeyIndex(self[relation], key[1])
        return self.key_indexes[key]

    def key_index(self, relation: str, columns: Sequence[str]) -> KeyIndex | None:
        return self.key_indexes.get((relation, tuple(sorted(columns))))

    def vector_index(self, relation: str, column: str):
        return self.vector_indexes.get((relation, column))

    def stats(self, relation: str, columns: Sequence[str]) -> ColumnStats:
        """One-pass distinct count (and min/max for a single numeric column)."""
        key = (relation, tuple(sorted(columns)))
        st = self._stats.get(key)
        if st is None:
            rel = self[relation]
            arrays = [rel.values(c) for c in key[1]]
            if len(arrays) == 1:
                vals = arrays[0]
                ndv = len(set(vals.tolist()))
                lo = hi = None
                if vals.dtype != object and len(vals):
                    lo, hi = float(vals.min()), float(vals.max())
                st = ColumnStats(ndv, lo, hi)
            else:
                st = ColumnStats(len(set(zip(*(a.tolist() for a in arrays)))))
            self._stats[key] = st
        return st

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.relations):
            h.update(self.relations[name].fingerprint().encode())
        return h.hexdigest()
