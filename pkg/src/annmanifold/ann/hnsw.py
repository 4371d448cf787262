"""Hierarchical navigable small-world graph index.

Points are inserted one at a time.  Each draws a top layer
``floor(-ln(u) * level_scale)`` with ``u ~ U(0, 1]``, so higher layers thin
out geometrically.  Queries descend greedily from the entry point through
the sparse upper layers and finish with a best-first search of width ``ef``
on layer 0.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from annmanifold import _kernels
from annmanifold.core import as_cloud
from annmanifold.errors import InvalidParameter, InvalidState
from annmanifold.metrics import Metric


def default_level_scale(n_links: int) -> float:
    return 1.0 / math.log(max(n_links, 2))


def sample_levels(n: int, level_scale: float, rng: np.random.Generator) -> np.ndarray:
    u = 1.0 - rng.random(n)  # (0, 1]
    return np.floor(-np.log(u) * level_scale).astype(np.int64)


@dataclass
class HnswIndex:
    points: np.ndarray
    levels: np.ndarray
    layers: list = field(repr=False)   # layers[l]: {node: list of neighbor ids}
    entry: int
    n_links: int
    level_scale: float
    seed: Optional[int]
    metric: Metric

    @classmethod
    def from_adjacency(cls, points, adjacency: dict, entry: int, metric="euclidean") -> "HnswIndex":
        """Single-layer index over a caller-supplied graph."""
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        layer = {int(i): sorted(int(j) for j in adjacency.get(i, ())) for i in range(pts.shape[0])}
        return cls(pts, np.zeros(pts.shape[0], dtype=np.int64), [layer], int(entry),
                   n_links=max((len(v) for v in layer.values()), default=0),
                   level_scale=0.0, seed=None, metric=Metric.parse(metric))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def top_layer(self) -> int:
        return len(self.layers) - 1

    def layer_sizes(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def edges(self, layer: int = 0) -> set[tuple[int, int]]:
        return {(i, j) for i, nb in self.layers[layer].items() for j in nb}

    def fingerprint(self) -> tuple:
        return (tuple(self.levels.tolist()), self.entry,
                tuple(tuple((i, tuple(nb)) for i, nb in sorted(layer.items())) for layer in self.layers))

    def layer0_connected(self) -> bool:
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        e = np.array(sorted(self.edges(0)), dtype=np.int64).reshape(-1, 2)
        a = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n, self.n))
        return connected_components(a, directed=True, connection="weak")[0] == 1

    # -- search primitives -------------------------------------------------

    def _keys(self, ids, q) -> np.ndarray:
        return _kernels.keys_to_many(self.points, np.asarray(ids, dtype=np.int64), q, self.metric.code)

    def _key(self, i: int, q) -> float:
        return _kernels.dist_key(self.points[i], q, self.metric.code)

    def greedy(self, q, entry: int, layer: int) -> int:
        """Move to the closest neighbor while it improves on the current point."""
        cur = int(entry)
        cur_key = self._key(cur, q)
        while True:
            nb = self.layers[layer][cur]
            if not nb:
                return cur
            best = min(zip(self._keys(nb, q).tolist(), nb))
            if best >= (cur_key, cur):
                return cur
            cur_key, cur = best

    def search_layer(self, q, entries, ef: int, layer: int) -> list[tuple[float, int]]:
        """Best-first search; returns up to ``ef`` (key, id) pairs ascending."""
        graph = self.layers[layer]
        visited = set(entries)
        ekeys = self._keys(list(entries), q).tolist()
        cand = list(zip(ekeys, entries))
        heapq.heapify(cand)
        found = [(-k, -i) for k, i in cand]
        heapq.heapify(found)
        while len(found) > ef:
            heapq.heappop(found)
        while cand:
            ck, c = heapq.heappop(cand)
            wk, wi = -found[0][0], -found[0][1]
            if (ck, c) > (wk, wi) and len(found) >= ef:
                break
            fresh = [j for j in graph[c] if j not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for k, j in zip(self._keys(fresh, q).tolist(), fresh):
                wk, wi = -found[0][0], -found[0][1]
                if len(found) < ef or (k, j) < (wk, wi):
                    heapq.heappush(cand, (k, j))
                    heapq.heappush(found, (-k, -j))
                    if len(found) > ef:
                        heapq.heappop(found)
        return sorted((-k, -i) for k, i in found)


def hnsw_build(cloud, n_links: int = 16, ef_construction: int = 100, seed: int = 0,
               level_scale: Optional[float] = None, metric="euclidean") -> HnswIndex:
    cloud = as_cloud(cloud)
    if n_links < 1 or ef_construction < 1:
        raise InvalidParameter("n_links and ef_construction must be >= 1")
    metric = Metric.parse(metric)
    level_scale = default_level_scale(n_links) if level_scale is None else float(level_scale)
    rng = np.random.default_rng(seed)
    levels = sample_levels(cloud.n, level_scale, rng)
    index = HnswIndex(cloud.points, levels, [], -1, int(n_links), level_scale, seed, metric)
    caps = lambda layer: 2 * n_links if layer == 0 else n_links  # noqa: E731
    for i in range(cloud.n):
        lvl = int(levels[i])
        while len(index.layers) <= lvl:
            index.layers.append({})
        for layer in range(lvl + 1):
            index.layers[layer][i] = []
        if index.entry < 0:
            index.entry = i
            continue
        q = cloud.points[i]
        top = int(levels[index.entry])
        ep = index.entry
        for layer in range(top, lvl, -1):
            ep = index.greedy(q, ep, layer)
        eps = [ep]
        for layer in range(min(lvl, top), -1, -1):
            found = index.search_layer(q, eps, max(ef_construction, n_links), layer)
            chosen = [j for _, j in found[:n_links]]
            graph = index.layers[layer]
            graph[i] = list(chosen)
            for j in chosen:
                nb = graph[j]
                nb.append(i)
                if len(nb) > caps(layer):
                    keys = index._keys(nb, cloud.points[j]).tolist()
                    graph[j] = [x for _, x in sorted(zip(keys, nb))[:caps(layer)]]
            eps = [j for _, j in found]
        if lvl > top:
            index.entry = i
    if cloud.n > 1 and n_links >= 2 and not index.layer0_connected():
        warnings.warn("HNSW layer-0 graph is disconnected", RuntimeWarning, stacklevel=2)
    return index


def hnsw_query(index: HnswIndex, q, k: int, ef: int, exclude: int = -1, entry: Optional[int] = None):
    """K best points found; returns (indices, distances), short rows padded with -1/inf."""
    if index.n == 0 or index.entry < 0:
        raise InvalidState("HNSW index is empty")
    if k < 1 or ef < k:
        raise InvalidParameter(f"need 1 <= K <= ef, got K={k}, ef={ef}")
    q = np.asarray(q, dtype=np.float64)
    ep = index.entry if entry is None else int(entry)
    for layer in range(int(index.levels[ep]), 0, -1):
        ep = index.greedy(q, ep, layer)
    width = ef + (1 if exclude >= 0 else 0)
    found = [(key, j) for key, j in index.search_layer(q, [ep], width, 0) if j != exclude][:k]
    ids = np.full(k, -1, dtype=np.int64)
    keys = np.full(k, np.inf)
    for m, (key, j) in enumerate(found):
        ids[m] = j
        keys[m] = key
    return ids, index.metric.key_to_distance(keys)
