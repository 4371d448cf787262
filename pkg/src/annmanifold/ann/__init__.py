from annmanifold.ann.annoy import AnnoyForest, annoy_build, annoy_query, annoy_query_batch
from annmanifold.ann.graph import BACKENDS, BuildParams, QueryParams, knn_graph, recall
from annmanifold.ann.hnsw import HnswIndex, hnsw_build, hnsw_query
from annmanifold.ann.kdtree import KdTree, kdtree_build, kdtree_query, kdtree_query_batch

__all__ = [
    "AnnoyForest", "annoy_build", "annoy_query", "annoy_query_batch",
    "BACKENDS", "BuildParams", "QueryParams", "knn_graph", "recall",
    "HnswIndex", "hnsw_build", "hnsw_query",
    "KdTree", "kdtree_build", "kdtree_query", "kdtree_query_batch",
]
