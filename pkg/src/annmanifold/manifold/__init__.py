from annmanifold.manifold.eigenmaps import laplacian_eigenmaps
from annmanifold.manifold.graphs import (GeodesicDistances, GraphLaplacian, components, geodesic_distances,
                                         graph_laplacian, largest_component, symmetric_adjacency)
from annmanifold.manifold.isomap import classical_mds, double_center, isomap
from annmanifold.manifold.lle import hessian_lle, hessian_matrix, lle, reconstruction_weights

ALGORITHMS = ("isomap", "lle", "laplacian_eigenmaps", "hessian_lle")


def embed(cloud, graph, algorithm: str, d: int, **kw):
    """Dispatch to one of the four embeddings by name."""
    from annmanifold.errors import InvalidParameter

    if algorithm == "isomap":
        return isomap(cloud, graph, d)
    if algorithm == "lle":
        return lle(cloud, graph, d, **kw)
    if algorithm == "laplacian_eigenmaps":
        return laplacian_eigenmaps(graph, d, **kw)
    if algorithm == "hessian_lle":
        return hessian_lle(cloud, graph, d)
    raise InvalidParameter(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


__all__ = [
    "ALGORITHMS", "embed",
    "GeodesicDistances", "GraphLaplacian", "components", "geodesic_distances", "graph_laplacian",
    "largest_component", "symmetric_adjacency",
    "classical_mds", "double_center", "isomap",
    "hessian_lle", "hessian_matrix", "lle", "reconstruction_weights",
    "laplacian_eigenmaps",
]
