"""Classical multidimensional scaling and Isomap."""

from __future__ import annotations

import warnings

import numpy as np

from annmanifold.core import Embedding, NeighborGraph, as_cloud
from annmanifold.errors import InvalidInput, InvalidParameter, InvalidState
from annmanifold.manifold import eigen
from annmanifold.manifold.graphs import geodesic_distances, largest_component


def double_center(dist: np.ndarray) -> np.ndarray:
    """B = -1/2 J D^2 J with J the centering matrix."""
    D2 = np.asarray(dist, dtype=float) ** 2
    row = D2.mean(axis=1)
    B = -0.5 * (D2 - row[:, None] - row[None, :] + row.mean())
    return 0.5 * (B + B.T)


def classical_mds(dist, d: int) -> Embedding:
    """Coordinates whose Euclidean distances best match ``dist`` in ``d`` dimensions.

    Columns come in descending eigenvalue order.  Non-positive eigenvalues
    contribute zero columns, with a warning.
    """
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise InvalidInput("distance matrix must be square")
    if not np.all(np.isfinite(dist)):
        raise InvalidInput("distance matrix has non-finite entries")
    if d < 1:
        raise InvalidParameter("d must be >= 1")
    scale = max(float(np.abs(dist).max()), 1.0)
    if np.abs(np.diag(dist)).max(initial=0.0) > 1e-12 * scale or np.abs(dist - dist.T).max() > 1e-9 * scale:
        raise InvalidInput("distance matrix must be symmetric with a zero diagonal")
    n = dist.shape[0]
    vals, vecs = eigen.largest(double_center(dist), min(d, n))
    top = vals[0] if vals.size else 0.0
    keep = vals > eigen.ZERO_TOL * max(top, 0.0)
    if keep.sum() < d:
        warnings.warn(f"only {int(keep.sum())} positive eigenvalues for d={d}; padding with zeros",
                      RuntimeWarning, stacklevel=2)
    coords = np.zeros((n, d))
    m = vals.size
    coords[:, :m] = eigen.fix_signs(vecs) * np.sqrt(np.where(keep, vals, 0.0))
    return Embedding(coords, eigenvalues=np.pad(vals, (0, d - m)), method="mds")


def isomap(cloud, graph: NeighborGraph, d: int) -> Embedding:
    """Classical MDS on graph geodesics; only the largest component is embedded."""
    cloud = as_cloud(cloud)
    if graph.n != cloud.n:
        raise InvalidInput(f"graph has {graph.n} rows but the cloud has {cloud.n} points")
    geo = geodesic_distances(graph)
    keep = largest_component(geo.labels)
    if keep.size < d + 1:
        raise InvalidState(f"largest component has {keep.size} points; need at least d+1 = {d + 1}")
    dropped = tuple(int(i) for i in np.setdiff1d(np.arange(cloud.n), keep))
    if dropped:
        warnings.warn(f"neighbor graph is disconnected; embedding {keep.size} of {cloud.n} points",
                      RuntimeWarning, stacklevel=2)
    emb = classical_mds(geo.dist[np.ix_(keep, keep)], d)
    return Embedding(emb.coords, keep, emb.eigenvalues, "isomap", dropped)
