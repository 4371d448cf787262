"""Manifold learning on exact and approximate nearest-neighbor graphs."""

from annmanifold.core import (
    Embedding,
    NeighborGraph,
    PointCloud,
    RankStructure,
    brute_force_knn,
    rank_matrix,
)
from annmanifold.metrics import Metric

__version__ = "0.1.0"

__all__ = [
    "Embedding", "Metric", "NeighborGraph", "PointCloud", "RankStructure",
    "brute_force_knn", "rank_matrix",
]
