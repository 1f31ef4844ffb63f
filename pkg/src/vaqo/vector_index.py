"""HNSW approximate index and the exact brute-force oracle, both under L2 distance.

Distances everywhere go through the same sequential float64 kernel, so a row the
index reports is re-verifiable bit-for-bit by the brute-force scan.
"""

from __future__ import annotations

import heapq
import itertools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .storage import Relation, SchemaError

_MAX_LEVEL = 16
_versions = itertools.count(1)


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"M must be >= 2, got {self.M}")
        if self.ef_construction < self.M:
            raise ValueError(f"ef_construction ({self.ef_construction}) must be >= M ({self.M})")
        if self.ef_search < 1:
            raise ValueError(f"ef_search must be >= 1, got {self.ef_search}")


@dataclass
class RangeResult:
    row_ids: np.ndarray
    distances: np.ndarray
    visited_count: int = 0

    def __len__(self) -> int:
        return len(self.row_ids)


class DimensionMismatch(ValueError):
    pass


# -- kernels ----------------------------------------------------------------------


@njit(cache=True, inline="always")
def _sqdist(a, b):
    # four independent lanes summed in a fixed order: deterministic, and every
    # consumer (index, brute force, executor) shares this exact arithmetic
    n = a.shape[0]
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    a3 = 0.0
    k = 0
    while k + 4 <= n:
        d0 = np.float64(a[k]) - np.float64(b[k])
        d1 = np.float64(a[k + 1]) - np.float64(b[k + 1])
        d2 = np.float64(a[k + 2]) - np.float64(b[k + 2])
        d3 = np.float64(a[k + 3]) - np.float64(b[k + 3])
        a0 += d0 * d0
        a1 += d1 * d1
        a2 += d2 * d2
        a3 += d3 * d3
        k += 4
    while k < n:
        d0 = np.float64(a[k]) - np.float64(b[k])
        a0 += d0 * d0
        k += 1
    return (a0 + a1) + (a2 + a3)


@njit(cache=True, inline="always")
def _dist(vecs, i, q):
    return math.sqrt(_sqdist(vecs[i], q))


@njit(cache=True)
def _pair_dist(vecs, i, j):
    return math.sqrt(_sqdist(vecs[i], vecs[j]))


@njit(cache=True)
def l2_distances(vecs, q):
    """Distance from ``q`` to every row of ``vecs`` (float64)."""
    out = np.empty(vecs.shape[0], dtype=np.float64)
    for i in range(vecs.shape[0]):
        out[i] = _dist(vecs, i, q)
    return out


@njit(cache=True)
def _greedy(q, vecs, links, counts, level, ep):
    cur = ep
    cur_d = _dist(vecs, cur, q)
    changed = True
    while changed:
        changed = False
        for j in range(counts[level, cur]):
            e = links[level, cur, j]
            d = _dist(vecs, e, q)
            if d < cur_d or (d == cur_d and e < cur):
                cur_d = d
                cur = e
                changed = True
    return cur


@njit(cache=True)
def _search_layer(q, vecs, links, counts, level, eps, ef, visited, tag):
    cand = [(0.0, np.int64(0))]
    cand.pop()
    best = [(0.0, np.int64(0))]
    best.pop()
    nvisit = 0
    for i in range(eps.shape[0]):
        e = np.int64(eps[i])
        if visited[e] == tag:
            continue
        visited[e] = tag
        nvisit += 1
        d = _dist(vecs, e, q)
        heapq.heappush(cand, (d, e))
        heapq.heappush(best, (-d, -e))
        if len(best) > ef:
            heapq.heappop(best)
    while len(cand) > 0:
        dc, c = heapq.heappop(cand)
        if len(best) >= ef and dc > -best[0][0]:
            break
        for j in range(counts[level, c]):
            e = np.int64(links[level, c, j])
            if visited[e] == tag:
                continue
            visited[e] = tag
            nvisit += 1
            d = _dist(vecs, e, q)
            if len(best) < ef or d < -best[0][0]:
                heapq.heappush(cand, (d, e))
                heapq.heappush(best, (-d, -e))
                if len(best) > ef:
                    heapq.heappop(best)
    n = len(best)
    ids = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    for k in range(n - 1, -1, -1):
        nd, ne = heapq.heappop(best)
        ids[k] = -ne
        dists[k] = -nd
    return ids, dists, nvisit


@njit(cache=True)
def _select_neighbors(vecs, cand_ids, cand_d, m):
    """Diversity heuristic; pruned candidates back-fill up to ``m``."""
    n = cand_ids.shape[0]
    chosen = np.empty(min(n, m), dtype=np.int64)
    taken = np.zeros(n, dtype=np.bool_)
    k = 0
    for i in range(n):
        if k >= m:
            break
        e = cand_ids[i]
        good = True
        for r in range(k):
            if _pair_dist(vecs, e, chosen[r]) < cand_d[i]:
                good = False
                break
        if good:
            chosen[k] = e
            taken[i] = True
            k += 1
    for i in range(n):
        if k >= m:
            break
        if not taken[i]:
            chosen[k] = cand_ids[i]
            k += 1
    return chosen[:k]


@njit(cache=True)
def _order(ids, dists):
    # ascending distance, ties by id
    idx = np.argsort(ids, kind="mergesort")
    idx = idx[np.argsort(dists[idx], kind="mergesort")]
    return ids[idx], dists[idx]


@njit(cache=True)
def _build(vecs, levels, m, efc, max_level):
    n = vecs.shape[0]
    width = 2 * m
    links = np.full((max_level + 1, n, width), -1, dtype=np.int32)
    counts = np.zeros((max_level + 1, n), dtype=np.int32)
    visited = np.zeros(n, dtype=np.uint32)
    tag = np.uint32(0)
    entry = 0
    top = levels[0]
    for i in range(1, n):
        q = vecs[i]
        li = levels[i]
        ep = entry
        for lc in range(top, li, -1):
            ep = _greedy(q, vecs, links, counts, lc, ep)
        eps = np.array([ep], dtype=np.int64)
        for lc in range(min(li, top), -1, -1):
            tag += np.uint32(1)
            w_ids, w_d, _ = _search_layer(q, vecs, links, counts, lc, eps, efc, visited, tag)
            nb = _select_neighbors(vecs, w_ids, w_d, m)
            for j in range(nb.shape[0]):
                links[lc, i, j] = nb[j]
            counts[lc, i] = nb.shape[0]
            cap = width if lc == 0 else m
            for j in range(nb.shape[0]):
                e = nb[j]
                c = counts[lc, e]
                if c < cap:
                    links[lc, e, c] = i
                    counts[lc, e] = c + 1
                else:
                    pool = np.empty(c + 1, dtype=np.int64)
                    pd = np.empty(c + 1, dtype=np.float64)
                    for t in range(c):
                        pool[t] = links[lc, e, t]
                    pool[c] = i
                    for t in range(c + 1):
                        pd[t] = _pair_dist(vecs, e, pool[t])
                    pool, pd = _order(pool, pd)
                    keep = _select_neighbors(vecs, pool, pd, cap)
                    for t in range(keep.shape[0]):
                        links[lc, e, t] = keep[t]
                    for t in range(keep.shape[0], width):
                        links[lc, e, t] = -1
                    counts[lc, e] = keep.shape[0]
            eps = w_ids
        if li > top:
            top = li
            entry = i
    return links, counts, entry


@njit(cache=True)
def _range_level0(q, vecs, links, counts, ep, ef, threshold, visited, tag):
    d0 = _dist(vecs, ep, q)
    cand = [(d0, np.int64(ep))]
    best = [(-d0, -np.int64(ep))]
    visited[ep] = tag
    nvisit = 1
    out_ids = [np.int64(0)]
    out_d = [0.0]
    out_ids.pop()
    out_d.pop()
    if d0 < threshold:
        out_ids.append(np.int64(ep))
        out_d.append(d0)
    while len(cand) > 0:
        dc, c = heapq.heappop(cand)
        if dc >= threshold and len(best) >= ef and dc > -best[0][0]:
            break
        for j in range(counts[0, c]):
            e = np.int64(links[0, c, j])
            if visited[e] == tag:
                continue
            visited[e] = tag
            nvisit += 1
            d = _dist(vecs, e, q)
            inside = d < threshold
            if inside:
                out_ids.append(e)
                out_d.append(d)
            if inside or len(best) < ef or d < -best[0][0]:
                heapq.heappush(cand, (d, e))
                heapq.heappush(best, (-d, -e))
                if len(best) > ef:
                    heapq.heappop(best)
    ids = np.empty(len(out_ids), dtype=np.int64)
    ds = np.empty(len(out_ids), dtype=np.float64)
    for k in range(len(out_ids)):
        ids[k] = out_ids[k]
        ds[k] = out_d[k]
    ids, ds = _order(ids, ds)
    return ids, ds, nvisit


# -- index ------------------------------------------------------------------------


class HnswIndex:
    """Layered proximity graph over one vector column.  Node ids equal row ids."""

    def __init__(self, params: HnswParams, vectors: np.ndarray, levels: np.ndarray,
                 links: np.ndarray, counts: np.ndarray, entry_point: int,
                 relation: str = "", column: str = ""):
        self.params = params
        self.vectors = vectors
        self.levels = levels
        self.links = links
        self.counts = counts
        self.entry_point = int(entry_point)
        self.relation = relation
        self.column = column
        self.version = next(_versions)
        self.search_count = 0
        self._visited = np.zeros(len(vectors), dtype=np.uint32)
        self._tag = 0

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def max_level(self) -> int:
        return self.links.shape[0] - 1

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def neighbors(self, node: int, level: int = 0) -> np.ndarray:
        return self.links[level, node, : self.counts[level, node]]

    def _next_tag(self) -> np.uint32:
        self._tag += 1
        if self._tag >= 2**32 - 1:
            self._visited[:] = 0
            self._tag = 1
        return np.uint32(self._tag)

    def _descend(self, q: np.ndarray) -> int:
        ep = self.entry_point
        for lc in range(self.max_level, 0, -1):
            ep = _greedy(q, self.vectors, self.links, self.counts, lc, ep)
        return ep

    def _query(self, query) -> np.ndarray:
        q = np.ascontiguousarray(query, dtype=np.float32)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise DimensionMismatch(f"query dim {q.shape} does not match index dim {self.dim}")
        return q


def _assign_levels(n: int, m: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    ml = 1.0 / math.log(m)
    lv = np.floor(-np.log(np.maximum(u, 1e-300)) * ml).astype(np.int32)
    return np.minimum(lv, _MAX_LEVEL)


def build_index(relation: Relation, column: str, params: HnswParams | None = None) -> HnswIndex:
    params = params or HnswParams()
    col = relation.column(column)
    if not col.kind.is_vector:
        raise SchemaError(f"column {column!r} is {col.kind}, not a vector column")
    vecs = np.ascontiguousarray(col.values, dtype=np.float32)
    n = len(vecs)
    if n == 0:
        raise ValueError(f"cannot index empty relation {relation.name!r}")
    levels = _assign_levels(n, params.M, params.seed)
    links, counts, entry = _build(vecs, levels, params.M, params.ef_construction, int(levels.max()))
    return HnswIndex(params, vecs, levels, links, counts, entry, relation.name, column)


def range_search(index: HnswIndex, query, threshold: float, ef_search: int | None = None) -> RangeResult:
    """Approximate set of rows with distance strictly below ``threshold``."""
    q = index._query(query)
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    ef = ef_search or index.params.ef_search
    index.search_count += 1
    ep = index._descend(q)
    ids, ds, nvisit = _range_level0(q, index.vectors, index.links, index.counts, ep, ef,
                                    float(threshold), index._visited, index._next_tag())
    return RangeResult(ids, ds, int(nvisit))


def knn_search(index: HnswIndex, query, k: int, ef_search: int | None = None) -> RangeResult:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = index._query(query)
    ef = max(ef_search or index.params.ef_search, k)
    index.search_count += 1
    ep = index._descend(q)
    ids, ds, nvisit = _search_layer(q, index.vectors, index.links, index.counts, 0,
                                    np.array([ep], dtype=np.int64), ef, index._visited, index._next_tag())
    ids, ds = _order(ids, ds)
    return RangeResult(ids[:k], ds[:k], int(nvisit))


def brute_force_range(relation: Relation, column: str, query, threshold: float) -> RangeResult:
    """Exact ``{row : ||v_row - query|| < threshold}``, sorted by (distance, row id)."""
    col = relation.column(column)
    if not col.kind.is_vector:
        raise SchemaError(f"column {column!r} is {col.kind}, not a vector column")
    q = np.ascontiguousarray(query, dtype=np.float32)
    if q.ndim != 1 or q.shape[0] != col.kind.dim:
        raise DimensionMismatch(f"query dim {q.shape} does not match column dim {col.kind.dim}")
    vecs = col.values
    if len(vecs) == 0:
        return RangeResult(np.empty(0, np.int64), np.empty(0), 0)
    d = l2_distances(vecs, q)
    ids = np.nonzero(d < threshold)[0].astype(np.int64)
    ids, ds = _order(ids, d[ids])
    return RangeResult(ids, ds, len(vecs))


def brute_force_knn(relation: Relation, column: str, query, k: int) -> RangeResult:
    vecs = relation.values(column)
    q = np.ascontiguousarray(query, dtype=np.float32)
    d = l2_distances(vecs, q)
    ids, ds = _order(np.arange(len(d), dtype=np.int64), d)
    return RangeResult(ids[:k], ds[:k], len(vecs))


# -- serialization ----------------------------------------------------------------

_MAGIC = b"VQHNSW\x00\x01"
_VERSION = 1
_HEADER = struct.Struct("<8sIIIIQIQqI")


def save_index(index: HnswIndex, path: str | Path) -> None:
    """Binary layout: header (magic, version, dim, M, ef_construction, node count,
    ef_search, seed, entry point, max level) then levels, counts and links arrays."""
    p = index.params
    header = _HEADER.pack(_MAGIC, _VERSION, index.dim, p.M, p.ef_construction, len(index),
                          p.ef_search, p.seed, index.entry_point, index.max_level)
    with Path(path).open("wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(index.levels, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(index.counts, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(index.links, dtype="<i4").tobytes())


def load_index(path: str | Path, relation: Relation, column: str) -> HnswIndex:
    raw = Path(path).read_bytes()
    magic, version, dim, m, efc, n, efs, seed, entry, max_level = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not an index file")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    vecs = np.ascontiguousarray(relation.values(column), dtype=np.float32)
    if vecs.shape != (n, dim):
        raise ValueError(f"{path}: index covers {n}x{dim}, column is {vecs.shape[0]}x{vecs.shape[1]}")
    off = _HEADER.size
    levels = np.frombuffer(raw, "<i4", n, off).astype(np.int32)
    off += 4 * n
    counts = np.frombuffer(raw, "<i4", (max_level + 1) * n, off).reshape(max_level + 1, n).astype(np.int32)
    off += 4 * (max_level + 1) * n
    links = np.frombuffer(raw, "<i4", (max_level + 1) * n * 2 * m, off)
    links = links.reshape(max_level + 1, n, 2 * m).astype(np.int32)
    params = HnswParams(m, efc, efs, seed)
    return HnswIndex(params, vecs, levels, links, counts, entry, relation.name, column)
