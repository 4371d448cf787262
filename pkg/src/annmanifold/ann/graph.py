"""kNN-graph construction over any backend, and recall against an exact graph."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from annmanifold.ann.annoy import annoy_build, annoy_query_batch
from annmanifold.ann.hnsw import hnsw_build, hnsw_query
from annmanifold.ann.kdtree import kdtree_build, kdtree_query_batch
from annmanifold.core import NeighborGraph, _check_k, as_cloud, brute_force_knn
from annmanifold.errors import InvalidInput, InvalidParameter
from annmanifold.metrics import Metric

BACKENDS = ("brute", "kdtree", "annoy", "hnsw")


@dataclass(frozen=True)
class QueryParams:
    epsilon: float = 0.0
    search_k: int = 500
    ef: Optional[int] = None   # None -> 2K

    def __post_init__(self):
        if self.epsilon < 0:
            raise InvalidParameter("epsilon must be >= 0")
        if self.search_k < 1:
            raise InvalidParameter("search_k must be >= 1")
        if self.ef is not None and self.ef < 1:
            raise InvalidParameter("ef must be >= 1")


@dataclass(frozen=True)
class BuildParams:
    leaf_capacity: int = 1
    n_trees: int = 50
    kappa: int = 16
    n_links: int = 16
    ef_construction: int = 100
    seed: int = 0


def knn_graph(cloud, k: int, backend: str = "brute", params: QueryParams = QueryParams(),
              build: BuildParams = BuildParams(), metric="euclidean") -> NeighborGraph:
    """K-nearest-neighbor graph of the indexed points themselves (self excluded).

    ``seconds`` on the result covers index build plus all queries.
    """
    cloud = as_cloud(cloud)
    metric = Metric.parse(metric)
    _check_k(cloud.n, k)
    X = cloud.points
    rows = np.arange(cloud.n)
    t0 = time.perf_counter()
    short = None
    if backend == "brute":
        g = brute_force_knn(cloud, k, metric)
        ids, dist = g.indices, g.distances
    elif backend == "kdtree":
        tree = kdtree_build(cloud, build.leaf_capacity, metric)
        ids, dist, _ = kdtree_query_batch(tree, X, k, params.epsilon, exclude=rows)
    elif backend == "annoy":
        if params.search_k < k:
            raise InvalidParameter(f"search_k={params.search_k} must be >= K={k}")
        forest = annoy_build(cloud, build.n_trees, build.kappa, build.seed, metric)
        # visit queries leaf by leaf of the first tree so consecutive queries share cache lines
        order = np.ascontiguousarray(forest.perm[:cloud.n])
        ids, dist, short = np.empty((cloud.n, k), dtype=np.int64), np.empty((cloud.n, k)), np.empty(cloud.n, bool)
        ids[order], dist[order], short[order], _ = annoy_query_batch(forest, X[order], k, params.search_k,
                                                                     exclude=order)
    elif backend == "hnsw":
        ef = 2 * k if params.ef is None else params.ef
        if ef < k:
            raise InvalidParameter(f"ef={ef} must be >= K={k}")
        index = hnsw_build(cloud, build.n_links, build.ef_construction, build.seed, metric=metric)
        ids = np.empty((cloud.n, k), dtype=np.int64)
        dist = np.empty((cloud.n, k))
        for i in rows:
            ids[i], dist[i] = hnsw_query(index, X[i], k, ef, exclude=int(i))
        short = (ids < 0).any(axis=1)
    else:
        raise InvalidParameter(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    seconds = time.perf_counter() - t0
    return NeighborGraph(ids, dist, metric, short=short, seconds=seconds)


def recall(approx: NeighborGraph, exact: NeighborGraph) -> float:
    """Fraction of exact neighbor slots recovered, pooled over all points."""
    if approx.indices.shape != exact.indices.shape:
        raise InvalidInput(f"graph shapes differ: {approx.indices.shape} vs {exact.indices.shape}")
    n, k = exact.indices.shape
    hits = 0
    for a, e in zip(approx.indices, exact.indices):
        hits += len(set(a[a >= 0].tolist()) & set(e.tolist()))
    return hits / (n * k)
