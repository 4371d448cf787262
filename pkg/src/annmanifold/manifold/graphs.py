"""Symmetrized neighbor graphs, geodesic distances and graph Laplacians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra

from annmanifold.core import NeighborGraph
from annmanifold.errors import InvalidInput, InvalidParameter


def _edges(graph: NeighborGraph):
    if graph.has_short_rows or np.any(graph.indices < 0):
        raise InvalidInput("neighbor graph has unfilled rows; rebuild with a larger search budget")
    n, k = graph.indices.shape
    rows = np.repeat(np.arange(n), k)
    return rows, graph.indices.ravel(), graph.distances.ravel()


def symmetric_adjacency(graph: NeighborGraph, values=None) -> sparse.csr_matrix:
    """Union-symmetrized adjacency: i~j when either lists the other.

    ``values`` holds one weight per directed edge (default: the distances).
    A pair listed in both directions keeps the larger weight; for exact
    distances the two are identical.  Zero-length edges between coincident
    points are kept as explicit zeros.
    """
    rows, cols, dist = _edges(graph)
    vals = dist if values is None else np.asarray(values, dtype=float).ravel()
    n = graph.n
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    v = np.concatenate([vals, vals])
    key = r * n + c
    order = np.lexsort((-v, key))
    key, v = key[order], v[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    key, v = key[first], v[first]
    return sparse.csr_matrix((v, (key // n, key % n)), shape=(n, n))


def components(graph: NeighborGraph) -> np.ndarray:
    """Connected-component label per point of the union-symmetrized graph."""
    rows, cols, _ = _edges(graph)
    a = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(graph.n, graph.n))
    _, labels = connected_components(a, directed=True, connection="weak")
    return labels


def largest_component(labels: np.ndarray) -> np.ndarray:
    """Members of the largest component; ties go to the one holding the smallest index."""
    counts = np.bincount(labels)
    best = np.flatnonzero(counts == counts.max())
    first = [np.flatnonzero(labels == c)[0] for c in best]
    return np.flatnonzero(labels == best[int(np.argmin(first))])


@dataclass(frozen=True)
class GeodesicDistances:
    dist: np.ndarray       # inf where unreachable
    labels: np.ndarray     # component label per point

    def reachable(self, i: int, j: int) -> bool:
        return bool(self.labels[i] == self.labels[j])

    @property
    def connected(self) -> bool:
        return bool(np.all(self.labels == self.labels[0]))


def geodesic_distances(graph: NeighborGraph) -> GeodesicDistances:
    """All-pairs shortest paths over the union-symmetrized graph."""
    # csgraph treats explicit zeros in sparse input as zero-length edges
    dist = dijkstra(symmetric_adjacency(graph), directed=False)
    return GeodesicDistances(dist, components(graph))


@dataclass(frozen=True)
class GraphLaplacian:
    W: sparse.csr_matrix
    degrees: np.ndarray

    @property
    def D(self) -> sparse.dia_matrix:
        return sparse.diags(self.degrees)

    @property
    def L(self) -> sparse.csr_matrix:
        return (self.D - self.W).tocsr()


def graph_laplacian(graph: NeighborGraph, weights: str = "binary", sigma: float | None = None) -> GraphLaplacian:
    """Weights on the union-symmetrized kNN support.

    ``binary`` sets every edge to 1; ``heat`` uses exp(-d^2 / (2 sigma^2)).
    """
    if weights == "binary":
        w = np.ones(graph.indices.size)
    elif weights == "heat":
        if sigma is None or not sigma > 0:
            raise InvalidParameter("heat weights need sigma > 0")
        w = np.exp(-graph.distances.ravel() ** 2 / (2.0 * sigma ** 2))
    else:
        raise InvalidParameter(f"unknown weights {weights!r}; expected 'binary' or 'heat'")
    W = symmetric_adjacency(graph, w)
    W.eliminate_zeros()
    return GraphLaplacian(W, np.asarray(W.sum(axis=1)).ravel())
