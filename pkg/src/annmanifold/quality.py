"""Embedding quality measures and density-based anomaly flagging.

Notation: ``rho[i, j]`` is the rank of x_j among the neighbors of x_i in the
input space and ``r[i, j]`` the same in the output space (rank 1 = nearest,
self = 0).  ``U_K(i)`` and ``V_K(i)`` are the K-neighborhoods of i in the
input and output space.  Every measure is oriented so that larger is better.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from annmanifold import _kernels
from annmanifold.core import Embedding, NeighborGraph, RankStructure, as_cloud
from annmanifold.errors import InvalidInput, InvalidParameter
from annmanifold.metrics import Metric

DEFAULT_K = 20


# ---------------------------------------------------------------------------
# co-ranking


@dataclass(frozen=True)
class CoRankingMatrix:
    q: np.ndarray   # q[k-1, l-1] = #{(i, j): rho_ij = k and r_ij = l}

    @property
    def n(self) -> int:
        return self.q.shape[0] + 1


def _same_n(*objs) -> int:
    ns = {o.n for o in objs}
    if len(ns) != 1:
        raise InvalidInput(f"inputs disagree on N: {sorted(ns)}")
    return ns.pop()


def coranking(input_ranks: RankStructure, output_ranks: RankStructure) -> CoRankingMatrix:
    n = _same_n(input_ranks, output_ranks)
    off = ~np.eye(n, dtype=bool)
    rho = input_ranks.ranks[off] - 1
    r = output_ranks.ranks[off] - 1
    q = np.bincount(rho * (n - 1) + r, minlength=(n - 1) ** 2).reshape(n - 1, n - 1)
    return CoRankingMatrix(q)


def q_nx(q: CoRankingMatrix, k: int) -> float:
    n = q.n
    if not 1 <= k <= n - 1:
        raise InvalidParameter(f"K must lie in [1, N-1] = [1, {n - 1}], got {k}")
    return int(q.q[:k, :k].sum()) / (k * n)


# ---------------------------------------------------------------------------
# row-block kernels shared by the public functions and the chunked report


def _masks(rho, r, k):
    U = (rho >= 1) & (rho <= k)
    V = (r >= 1) & (r <= k)
    return U, V


def _block_sums(rho: np.ndarray, r: np.ndarray, k: int) -> dict:
    """Integer and float partial sums over a block of rows, in fixed order."""
    U, V = _masks(rho, r, k)
    diff = np.abs(rho - r).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        wn = np.where(U, diff / np.where(U, rho, 1), 0.0).sum(axis=1)
        wv = np.where(V, diff / np.where(V, r, 1), 0.0).sum(axis=1)
    return {
        "overlap": int((U & V).sum()),
        "trust": int(np.where(V & ~U, rho - k, 0).sum()),
        "cont": int(np.where(U & ~V, r - k, 0).sum()),
        "wn_rows": wn,
        "wv_rows": wv,
    }


def _unit_ratio(g: int, s: int) -> float:
    # g = 0 only at K = N - 1, where every point is a neighbor and s = 0
    return 1.0 if g == 0 else (g - 2 * s) / g


def g_normalizer(n: int, k: int) -> int:
    if k < n / 2:
        return n * k * (2 * n - 3 * k - 1)
    return n * (n - k) * (n - k - 1)


def h_normalizer(n: int, k: int) -> float:
    return n * sum(abs(n - 2 * i + 1) / i for i in range(1, k + 1))


def _check_k(n: int, k: int) -> None:
    if not 1 <= k < n:
        raise InvalidParameter(f"K must satisfy 1 <= K < N, got K={k}, N={n}")


def lcmc(graph_in: NeighborGraph, graph_out: NeighborGraph) -> float:
    n = _same_n(graph_in, graph_out)
    if graph_in.k != graph_out.k:
        raise InvalidInput("graphs disagree on K")
    k = graph_in.k
    _check_k(n, k)
    overlap = sum(len(a & b) for a, b in zip(graph_in.neighbor_sets(), graph_out.neighbor_sets()))
    return (overlap * (n - 1) - n * k * k) / (n * k * (n - 1))


def trustworthiness(input_ranks: RankStructure, graph_in: NeighborGraph, graph_out: NeighborGraph) -> float:
    n = _same_n(input_ranks, graph_in, graph_out)
    k = graph_out.k
    _check_k(n, k)
    rho = input_ranks.ranks
    U = np.zeros((n, n), dtype=bool)
    U[np.repeat(np.arange(n), graph_in.k), graph_in.indices.ravel()] = True
    V = np.zeros((n, n), dtype=bool)
    V[np.repeat(np.arange(n), k), graph_out.indices.ravel()] = True
    s = int(np.where(V & ~U, rho - k, 0).sum())
    return _unit_ratio(g_normalizer(n, k), s)


def continuity(output_ranks: RankStructure, graph_in: NeighborGraph, graph_out: NeighborGraph) -> float:
    """Trustworthiness with the roles of the two spaces exchanged."""
    return trustworthiness(output_ranks, graph_out, graph_in)


def mrre(input_ranks: RankStructure, output_ranks: RankStructure, graph_in: NeighborGraph,
         graph_out: NeighborGraph) -> tuple[float, float]:
    """(1 - W_n, 1 - W_nu)."""
    n = _same_n(input_ranks, output_ranks, graph_in, graph_out)
    k = graph_in.k
    _check_k(n, k)
    rho, r = input_ranks.ranks, output_ranks.ranks
    rows = np.repeat(np.arange(n), k)
    ju = graph_in.indices.ravel()
    jv = graph_out.indices.ravel()
    wn = (np.abs(rho[rows, ju] - r[rows, ju]) / rho[rows, ju]).reshape(n, k).sum(axis=1)
    wv = (np.abs(rho[rows, jv] - r[rows, jv]) / r[rows, jv]).reshape(n, k).sum(axis=1)
    h = h_normalizer(n, k)
    return 1.0 - float(np.sum(wn)) / h, 1.0 - float(np.sum(wv)) / h


# ---------------------------------------------------------------------------
# Procrustes


def _procrustes_terms(X: np.ndarray, Y: np.ndarray, nbrs: np.ndarray):
    if Y.shape[1] > X.shape[1]:
        raise InvalidParameter(f"embedding dimension {Y.shape[1]} exceeds input dimension {X.shape[1]}")
    ratios = []
    skipped = 0
    for nb in nbrs:
        xs, ys = X[nb], Y[nb]
        xc = xs - xs.mean(axis=0)
        yc = ys - ys.mean(axis=0)
        denom = float(np.einsum("ij,ij->", xs, xs))
        if not np.any(xc) or denom == 0.0:
            skipped += 1
            continue
        # best A (p x d, orthonormal columns) attains trace = nuclear norm of xc^T yc
        nuc = np.linalg.svd(xc.T @ yc, compute_uv=False).sum()
        g = float(np.einsum("ij,ij->", xc, xc) + np.einsum("ij,ij->", yc, yc) - 2.0 * nuc)
        ratios.append(max(g, 0.0) / denom)
    return ratios, skipped


def procrustes_measure(cloud, emb: Embedding, graph_in: NeighborGraph) -> float:
    """1 - G, where G averages per-neighborhood Procrustes residuals over sum ||x_j||^2."""
    cloud = as_cloud(cloud)
    X = cloud.points[emb.indices]
    if graph_in.n != emb.n:
        raise InvalidInput(f"graph has {graph_in.n} rows, embedding has {emb.n}")
    if graph_in.k < 2:
        raise InvalidParameter("Procrustes measure needs K >= 2")
    ratios, skipped = _procrustes_terms(X, emb.coords, graph_in.indices)
    if skipped:
        warnings.warn(f"{skipped} degenerate neighborhoods skipped in the Procrustes measure",
                      RuntimeWarning, stacklevel=2)
    if not ratios:
        raise InvalidInput("every neighborhood is degenerate")
    return 1.0 - float(np.sum(ratios)) / len(ratios)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class QualityReport:
    k: int
    lcmc: float
    trustworthiness: float
    continuity: float
    mrre_input: float
    mrre_output: float
    q_nx: float
    procrustes: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "QualityReport":
        return cls(**{f.name: (int if f.name == "k" else float)(d[f.name]) for f in fields(cls)})

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in asdict(self).values()]


def rank_rows(X: np.ndarray, rows: np.ndarray, metric: Metric) -> np.ndarray:
    """Rank rows for a subset of points (self 0, ties to the smaller index)."""
    keys = np.empty((rows.size, X.shape[0]))
    for m, i in enumerate(rows):
        keys[m] = _kernels.keys_to_many(X, np.arange(X.shape[0]), X[i], metric.code)
        keys[m, i] = -1.0
    order = np.argsort(keys, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(X.shape[0]), order.shape), axis=1)
    return ranks


def quality_report(cloud, emb: Embedding, k: int = DEFAULT_K, metric="euclidean",
                   out_metric="euclidean", chunk: int = 512) -> QualityReport:
    """All measures at neighborhood size K, comparing ``emb`` to the matching input points.

    Ranks are built in row blocks, so memory stays O(chunk x N).
    """
    cloud = as_cloud(cloud)
    metric, out_metric = Metric.parse(metric), Metric.parse(out_metric)
    X = np.ascontiguousarray(cloud.points[emb.indices])
    Y = np.ascontiguousarray(emb.coords)
    n = X.shape[0]
    _check_k(n, k)
    overlap = trust = cont = 0
    wn_rows, wv_rows, nbrs_in = [], [], []
    for s in range(0, n, chunk):
        rows = np.arange(s, min(s + chunk, n))
        rho = rank_rows(X, rows, metric)
        r = rank_rows(Y, rows, out_metric)
        b = _block_sums(rho, r, k)
        overlap += b["overlap"]
        trust += b["trust"]
        cont += b["cont"]
        wn_rows.append(b["wn_rows"])
        wv_rows.append(b["wv_rows"])
        nbrs_in.append(np.argsort(rho, axis=1, kind="stable")[:, 1:k + 1])
    g = g_normalizer(n, k)
    h = h_normalizer(n, k)
    ratios, skipped = _procrustes_terms(X, Y, np.concatenate(nbrs_in)) if k >= 2 else ([], 0)
    if skipped:
        warnings.warn(f"{skipped} degenerate neighborhoods skipped in the Procrustes measure",
                      RuntimeWarning, stacklevel=2)
    return QualityReport(
        k=int(k),
        lcmc=(overlap * (n - 1) - n * k * k) / (n * k * (n - 1)),
        trustworthiness=_unit_ratio(g, trust),
        continuity=_unit_ratio(g, cont),
        mrre_input=1.0 - float(np.sum(np.concatenate(wn_rows))) / h,
        mrre_output=1.0 - float(np.sum(np.concatenate(wv_rows))) / h,
        q_nx=overlap / (k * n),
        procrustes=1.0 - float(np.sum(ratios)) / len(ratios) if ratios else float("nan"),
    )


# ---------------------------------------------------------------------------
# density anomalies


@dataclass(frozen=True)
class DensityReport:
    densities: np.ndarray
    anomaly_indices: np.ndarray      # positions into the embedding rows, lowest density first
    bandwidth: np.ndarray

    def to_dict(self, ids=None) -> dict:
        lab = (lambda i: int(i)) if ids is None else (lambda i: ids[int(i)])
        return {"bandwidth": [float(b) for b in self.bandwidth],
                "anomalies": [lab(i) for i in self.anomaly_indices],
                "densities": [float(v) for v in self.densities]}


def normal_reference_bandwidth(Y: np.ndarray) -> np.ndarray:
    """Per-axis h = (4 / (d + 2))^(1 / (d + 4)) * sigma * N^(-1 / (d + 4))."""
    n, d = Y.shape
    sigma = Y.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    h = (4.0 / (d + 2)) ** (1.0 / (d + 4)) * sigma * n ** (-1.0 / (d + 4))
    if np.any(h <= 0):
        span = float(np.ptp(Y)) if Y.size else 0.0
        floor = 1e-9 * (span if span > 0 else 1.0)
        warnings.warn("zero spread along an embedding axis; bandwidth floored", RuntimeWarning, stacklevel=3)
        h = np.where(h > 0, h, floor)
    return h


def kde(Y: np.ndarray, at: Optional[np.ndarray] = None, bandwidth: Optional[np.ndarray] = None) -> np.ndarray:
    """Gaussian product-kernel density of the sample ``Y`` evaluated at ``at`` (default: Y)."""
    Y = np.asarray(Y, dtype=float)
    at = Y if at is None else np.asarray(at, dtype=float)
    h = normal_reference_bandwidth(Y) if bandwidth is None else np.asarray(bandwidth, dtype=float)
    out = np.empty(at.shape[0])
    for s in range(0, at.shape[0], 256):
        z = (at[s:s + 256, None, :] - Y[None, :, :]) / h
        out[s:s + 256] = np.exp(-0.5 * np.einsum("ijk,ijk->ij", z, z)).sum(axis=1)
    return out / (Y.shape[0] * np.prod(h) * (2.0 * np.pi) ** (Y.shape[1] / 2.0))


def density_anomalies(emb, count: int = 10) -> DensityReport:
    """Flag the ``count`` lowest-density points of a 2-d embedding."""
    Y = emb.coords if isinstance(emb, Embedding) else np.asarray(emb, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise InvalidParameter(f"density anomalies need a 2-d embedding, got shape {Y.shape}")
    n = Y.shape[0]
    if count < 1 or n < count:
        raise InvalidParameter(f"need 1 <= count <= N, got count={count}, N={n}")
    h = normal_reference_bandwidth(Y)
    dens = kde(Y, bandwidth=h)
    order = np.argsort(dens, kind="stable")
    return DensityReport(dens, order[:count], h)


__all__ = [
    "CoRankingMatrix", "DensityReport", "QualityReport", "DEFAULT_K",
    "continuity", "coranking", "density_anomalies", "g_normalizer", "h_normalizer", "kde", "lcmc",
    "mrre", "normal_reference_bandwidth", "procrustes_measure", "q_nx", "quality_report", "rank_rows",
    "trustworthiness",
]
