"""Shared data types, the brute-force neighbor oracle, and rank matrices.

Ties between equal distances are always broken in favour of the smaller
point index, everywhere in the package.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from annmanifold import _kernels
from annmanifold.errors import FormatError, InvalidInput, InvalidParameter
from annmanifold.metrics import Metric


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    ids: Optional[tuple] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InvalidInput(f"points must be an N x p matrix with N, p >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))
        if self.ids is not None:
            ids = tuple(self.ids)
            if len(ids) != pts.shape[0]:
                raise InvalidInput("ids must have one entry per point")
            if len(set(ids)) != len(ids):
                raise InvalidInput("ids must be unique")
            object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


def as_cloud(data) -> PointCloud:
    return data if isinstance(data, PointCloud) else PointCloud(data)


@dataclass(frozen=True)
class NeighborGraph:
    """K nearest neighbors of every point, self excluded, ascending by distance.

    Rows that an approximate index could not fill are padded with index -1
    and distance inf, and marked in ``short``.
    """

    indices: np.ndarray
    distances: np.ndarray
    metric: Metric = Metric.EUCLIDEAN
    short: Optional[np.ndarray] = None
    seconds: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        dist = np.asarray(self.distances, dtype=np.float64)
        if idx.ndim != 2 or idx.shape != dist.shape:
            raise InvalidInput("indices and distances must be matching N x K arrays")
        object.__setattr__(self, "indices", _frozen(idx))
        object.__setattr__(self, "distances", _frozen(dist))
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        if self.short is not None:
            object.__setattr__(self, "short", _frozen(np.asarray(self.short, dtype=bool)))

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    @property
    def has_short_rows(self) -> bool:
        return self.short is not None and bool(self.short.any())

    def neighbor_sets(self) -> list[set]:
        return [set(int(j) for j in row if j >= 0) for row in self.indices]

    def same_edges(self, other: "NeighborGraph") -> bool:
        return (self.indices.shape == other.indices.shape
                and bool(np.array_equal(self.indices, other.indices))
                and bool(np.array_equal(self.distances, other.distances)))

    def validate(self) -> None:
        """Check the structural invariants; raise InvalidInput on violation."""
        n, k = self.indices.shape
        rows = np.arange(n)[:, None]
        if np.any(self.indices == rows):
            raise InvalidInput("neighbor graph contains self-loops")
        full = self.indices >= 0
        if np.any(self.indices >= n):
            raise InvalidInput("neighbor index out of range")
        d = np.where(full, self.distances, np.inf)
        if np.any(full & ~np.isfinite(self.distances)) or np.any(self.distances[full] < 0):
            raise InvalidInput("edge distances must be finite and non-negative")
        if k > 1 and np.any(np.diff(d, axis=1) < 0):
            raise InvalidInput("edge distances must be ascending per row")


@dataclass(frozen=True)
class RankStructure:
    """N x N neighborhood ranks; row i, column j holds the rank of j seen from i."""

    ranks: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ranks", _frozen(np.asarray(self.ranks, dtype=np.int64)))

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    def neighbors(self, k: int) -> np.ndarray:
        """Indices with rank 1..k per row, in rank order."""
        order = np.argsort(self.ranks, axis=1, kind="stable")
        return order[:, 1:k + 1]


@dataclass(frozen=True)
class Embedding:
    """Output coordinates.

    ``indices`` maps rows back to the input cloud; it differs from
    ``arange(N)`` when only the largest graph component was embedded.
    """

    coords: np.ndarray
    indices: Optional[np.ndarray] = None
    eigenvalues: Optional[np.ndarray] = None
    method: str = ""
    dropped: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2:
            raise InvalidInput("embedding coordinates must be an N x d matrix")
        if not np.all(np.isfinite(c)):
            raise InvalidInput("embedding contains non-finite coordinates")
        object.__setattr__(self, "coords", _frozen(c))
        idx = np.arange(c.shape[0]) if self.indices is None else np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", _frozen(idx))
        if self.eigenvalues is not None:
            object.__setattr__(self, "eigenvalues", _frozen(np.asarray(self.eigenvalues, dtype=float)))

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    @property
    def n(self) -> int:
        return self.coords.shape[0]


# ---------------------------------------------------------------------------
# brute force


def _check_k(n: int, k: int) -> None:
    if k < 1:
        raise InvalidParameter(f"K must be >= 1, got {k}")
    if k >= n:
        raise InvalidParameter(f"K={k} needs at least K+1={k + 1} points, have {n}")


def _brute_euclidean(X: np.ndarray, rows: np.ndarray, k: int, chunk: int):
    # BLAS prefilter on centered data; candidates within a rounding margin of
    # the approximate K-th key are re-scored with the exact kernel.
    Xc = X - X.mean(axis=0)
    sq = np.einsum("ij,ij->i", Xc, Xc)
    p = X.shape[1]
    slack = 8.0 * (p + 2) * np.finfo(float).eps
    sq_max = float(sq.max())
    ids_out = np.empty((rows.size, k), dtype=np.int64)
    keys_out = np.empty((rows.size, k))
    for s in range(0, rows.size, chunk):
        r = rows[s:s + chunk]
        approx = sq[r, None] + sq[None, :] - 2.0 * (Xc[r] @ Xc.T)
        approx[np.arange(r.size), r] = np.inf
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        thresh = kth + slack * (sq[r] + sq_max) + 1e-300
        ids, keys = _kernels.exact_rows_from_prefilter(X, r, approx, thresh, k, _kernels.EUCLIDEAN)
        ids_out[s:s + r.size] = ids
        keys_out[s:s + r.size] = keys
    return ids_out, keys_out


def brute_force_knn(cloud, k: int, metric="euclidean", rows=None, chunk: int = 1024) -> NeighborGraph:
    """Exact K nearest neighbors of every point by scanning all pairs."""
    cloud = as_cloud(cloud)
    metric = Metric.parse(metric)
    _check_k(cloud.n, k)
    X = cloud.points
    rows = np.arange(cloud.n) if rows is None else np.asarray(rows, dtype=np.int64)
    if metric is Metric.EUCLIDEAN and cloud.n > 64:
        ids, keys = _brute_euclidean(X, rows, k, chunk)
    else:
        ids, keys = _kernels.exact_rows_direct(X, rows, k, metric.code)
    return NeighborGraph(ids, metric.key_to_distance(keys), metric)


def pairwise_distances(data, metric="euclidean") -> np.ndarray:
    metric = Metric.parse(metric)
    X = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if X.ndim == 1:
        X = X[:, None]
    return metric.key_to_distance(_kernels.pairwise_keys(X, metric.code))


def rank_matrix(data, metric="euclidean") -> RankStructure:
    """Neighborhood ranks of every point with respect to every other point.

    Rank 1 is the nearest neighbor; the diagonal is 0.  Equal distances rank
    the smaller index first.
    """
    X = data.points if isinstance(data, PointCloud) else np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise InvalidInput("rank matrix needs at least 2 points")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("non-finite coordinates")
    keys = _kernels.pairwise_keys(np.ascontiguousarray(X), Metric.parse(metric).code)
    np.fill_diagonal(keys, -1.0)
    order = np.argsort(keys, axis=1, kind="stable")
    ranks = np.empty((n, n), dtype=np.int64)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(n), (n, n)), axis=1)
    return RankStructure(ranks)


def graph_from_ranks(ranks: RankStructure, data, k: int, metric="euclidean") -> NeighborGraph:
    """NeighborGraph holding the rank-1..K neighbors of each point."""
    metric = Metric.parse(metric)
    X = data.points if isinstance(data, PointCloud) else np.asarray(data, dtype=float)
    _check_k(ranks.n, k)
    nb = ranks.neighbors(k)
    keys = np.array([[_kernels.dist_key(X[i], X[j], metric.code) for j in row]
                     for i, row in enumerate(nb)])
    return NeighborGraph(nb, metric.key_to_distance(keys), metric)


# ---------------------------------------------------------------------------
# serialization


def write_graph(graph: NeighborGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_graph(graph))


def format_graph(graph: NeighborGraph) -> str:
    lines = []
    for i in range(graph.n):
        cells = [str(i)] + [f"{int(j)}:{float(d)!r}"
                            for j, d in zip(graph.indices[i], graph.distances[i])]
        lines.append(", ".join(cells))
    return "\n".join(lines) + "\n"


def read_graph(path, metric="euclidean") -> NeighborGraph:
    text = Path(path).read_text(encoding="utf-8")
    rows = [ln for ln in text.splitlines() if ln.strip()]
    idx, dist = [], []
    for expected, line in enumerate(rows):
        cells = [c.strip() for c in line.split(",")]
        try:
            if int(cells[0]) != expected:
                raise FormatError(f"row {expected} out of order")
            pairs = [c.split(":") for c in cells[1:]]
            idx.append([int(j) for j, _ in pairs])
            dist.append([float(d) for _, d in pairs])
        except (ValueError, IndexError) as exc:
            raise FormatError(f"bad graph line {expected}: {line!r}") from exc
    if len({len(r) for r in idx}) > 1:
        raise FormatError("graph rows have differing K")
    g = NeighborGraph(np.array(idx, dtype=np.int64).reshape(len(idx), -1),
                      np.array(dist).reshape(len(idx), -1), metric)
    return NeighborGraph(g.indices, g.distances, metric, short=(g.indices < 0).any(axis=1))


def read_points_csv(path) -> PointCloud:
    """Numeric CSV, one row per point, optional header and optional `id` first column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{path}: no rows")
    try:
        [float(c) for c in rows[0]]
        header = None
    except ValueError:
        header = rows[0]
    body = rows[1:] if header is not None else rows
    has_id = header is not None and header[0].strip().lower() == "id"
    ids = None
    try:
        if has_id:
            ids = [r[0].strip() for r in body]
            vals = [[float(c) for c in r[1:]] for r in body]
        else:
            vals = [[float(c) for c in r] for r in body]
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc
    if len({len(v) for v in vals}) != 1:
        raise FormatError(f"{path}: ragged rows")
    return PointCloud(np.array(vals), ids)


def write_points_csv(cloud: PointCloud, path, prefix: str = "x") -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"{prefix}{k + 1}" for k in range(cloud.p)])
    ids: Sequence = cloud.ids if cloud.ids is not None else range(cloud.n)
    for i, row in zip(ids, cloud.points):
        w.writerow([i] + [repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_embedding_csv(emb: Embedding, path, ids: Optional[Sequence] = None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"y{k + 1}" for k in range(emb.d)])
    for r, i in enumerate(emb.indices):
        label = ids[int(i)] if ids is not None else int(i)
        w.writerow([label] + [repr(float(v)) for v in emb.coords[r]])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_embedding_csv(path) -> tuple[Embedding, list]:
    cloud = read_points_csv(path)
    ids = list(cloud.ids) if cloud.ids is not None else list(range(cloud.n))
    return Embedding(cloud.points), ids
