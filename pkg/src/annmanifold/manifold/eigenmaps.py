"""Laplacian eigenmaps."""

from __future__ import annotations

import warnings

import numpy as np

from annmanifold.core import Embedding, NeighborGraph
from annmanifold.errors import InvalidParameter
from annmanifold.manifold import eigen
from annmanifold.manifold.graphs import components, graph_laplacian, largest_component


def laplacian_eigenmaps(graph: NeighborGraph, d: int, weights: str = "binary",
                        sigma: float | None = None) -> Embedding:
    """Solve L v = lam D v and keep the eigenvectors of the d smallest nonzero eigenvalues.

    Vectors are D-orthonormal.  A disconnected graph is reduced to its
    largest component first.
    """
    if d < 1:
        raise InvalidParameter("d must be >= 1")
    lap = graph_laplacian(graph, weights, sigma)
    keep = largest_component(components(graph))
    if d >= keep.size:
        raise InvalidParameter(f"d={d} must be smaller than the component size {keep.size}")
    dropped = tuple(int(i) for i in np.setdiff1d(np.arange(graph.n), keep))
    if dropped:
        warnings.warn(f"neighbor graph is disconnected; embedding {keep.size} of {graph.n} points",
                      RuntimeWarning, stacklevel=2)
    L = lap.L[keep][:, keep]
    D = lap.D.tocsr()[keep][:, keep]
    if np.any(D.diagonal() <= 0):
        raise InvalidParameter("every embedded point needs a positive degree")
    vals, vecs = eigen.smallest(L, d + 1, D)
    # within one component exactly one eigenvalue is zero (constant vector)
    return Embedding(eigen.fix_signs(vecs[:, 1:]), keep, vals[1:], "laplacian_eigenmaps", dropped)
