"""k-d tree with (1+eps)-approximate K-nearest-neighbor search.

Nodes split on the dimension of largest spread, at the midpoint of the two
middle order statistics.  Each node stores the tightest axis-aligned box of
its points; a subtree is skipped when its box lies farther than
``delta* / (1 + eps)`` from the query, ``delta*`` being the current K-th
best distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from annmanifold import _kernels
from annmanifold.core import as_cloud
from annmanifold.errors import InvalidParameter
from annmanifold.metrics import Metric


@dataclass(frozen=True)
class KdTree:
    points: np.ndarray
    perm: np.ndarray          # point indices grouped by leaf
    split_dim: np.ndarray     # -1 marks a leaf
    split_val: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray         # leaf slice into perm
    end: np.ndarray
    lo: np.ndarray            # per-node bounding boxes
    hi: np.ndarray
    forced: np.ndarray        # nodes split evenly because all points coincided
    leaf_capacity: int
    metric: Metric

    @property
    def n_nodes(self) -> int:
        return self.split_dim.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.split_dim < 0))

    def leaves(self) -> list[np.ndarray]:
        return [self.perm[self.start[g]:self.end[g]] for g in np.flatnonzero(self.split_dim < 0)]


@njit(cache=True)
def _midpoint(a, b):
    c = a + (b - a) * 0.5
    if not c > a:
        c = b
    return c


@njit(cache=True)
def _build(X, leaf_cap):
    n, p = X.shape
    max_nodes = 2 * n + 1
    perm = np.arange(n)
    split_dim = np.full(max_nodes, -1, dtype=np.int64)
    split_val = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    end = np.zeros(max_nodes, dtype=np.int64)
    lo = np.zeros((max_nodes, p))
    hi = np.zeros((max_nodes, p))
    forced = np.zeros(max_nodes, dtype=np.bool_)

    stack = np.empty(max_nodes, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    start[0] = 0
    end[0] = n
    n_nodes = 1
    while sp > 0:
        sp -= 1
        g = stack[sp]
        s = start[g]
        e = end[g]
        for k in range(p):
            lo[g, k] = X[perm[s], k]
            hi[g, k] = X[perm[s], k]
        for m in range(s + 1, e):
            for k in range(p):
                v = X[perm[m], k]
                if v < lo[g, k]:
                    lo[g, k] = v
                if v > hi[g, k]:
                    hi[g, k] = v
        cnt = e - s
        if cnt <= leaf_cap:
            continue
        dim = 0
        spread = hi[g, 0] - lo[g, 0]
        for k in range(1, p):
            if hi[g, k] - lo[g, k] > spread:
                spread = hi[g, k] - lo[g, k]
                dim = k
        if spread > 0.0:
            vals = np.empty(cnt)
            for m in range(cnt):
                vals[m] = X[perm[s + m], dim]
            order = np.argsort(vals, kind="mergesort")
            sv = vals[order]
            mid = cnt // 2
            if sv[mid - 1] < sv[mid]:
                c = _midpoint(sv[mid - 1], sv[mid])
            else:
                # nearest distinct-value boundary to the middle
                best = -1
                for off in range(1, cnt):
                    j = mid - off
                    if j >= 1 and sv[j - 1] < sv[j]:
                        best = j
                        break
                    j = mid + off
                    if j <= cnt - 1 and sv[j - 1] < sv[j]:
                        best = j
                        break
                c = _midpoint(sv[best - 1], sv[best])
            tmp = perm[s:e][order].copy()
            perm[s:e] = tmp
            nleft = 0
            while nleft < cnt and sv[nleft] < c:
                nleft += 1
        else:
            c = lo[g, dim]
            nleft = cnt // 2
            forced[g] = True
        split_dim[g] = dim
        split_val[g] = c
        lch = n_nodes
        rch = n_nodes + 1
        n_nodes += 2
        left[g] = lch
        right[g] = rch
        start[lch] = s
        end[lch] = s + nleft
        start[rch] = s + nleft
        end[rch] = e
        stack[sp] = rch
        sp += 1
        stack[sp] = lch
        sp += 1
    return (perm, split_dim[:n_nodes], split_val[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], end[:n_nodes], lo[:n_nodes], hi[:n_nodes], forced[:n_nodes])


def kdtree_build(cloud, leaf_capacity: int = 1, metric="euclidean") -> KdTree:
    cloud = as_cloud(cloud)
    if leaf_capacity < 1:
        raise InvalidParameter("leaf_capacity must be >= 1")
    parts = _build(cloud.points, int(leaf_capacity))
    return KdTree(cloud.points, *parts, leaf_capacity=int(leaf_capacity), metric=Metric.parse(metric))


@njit(cache=True, nogil=True)
def _gap(q, lo, hi):
    if q < lo:
        return lo - q
    if q > hi:
        return q - hi
    return 0.0


@njit(cache=True, nogil=True)
def _box_key(lo, hi, q, metric):
    # Same accumulator layout as _kernels.dist_key, so the floating-point box
    # key never exceeds the key of any point inside the box.
    n = q.shape[0]
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    a3 = 0.0
    m = n - n % 4
    if metric == _kernels.EUCLIDEAN:
        for k in range(0, m, 4):
            g0 = _gap(q[k], lo[k], hi[k])
            g1 = _gap(q[k + 1], lo[k + 1], hi[k + 1])
            g2 = _gap(q[k + 2], lo[k + 2], hi[k + 2])
            g3 = _gap(q[k + 3], lo[k + 3], hi[k + 3])
            a0 += g0 * g0
            a1 += g1 * g1
            a2 += g2 * g2
            a3 += g3 * g3
        for k in range(m, n):
            g0 = _gap(q[k], lo[k], hi[k])
            a0 += g0 * g0
    else:
        for k in range(0, m, 4):
            a0 += _gap(q[k], lo[k], hi[k])
            a1 += _gap(q[k + 1], lo[k + 1], hi[k + 1])
            a2 += _gap(q[k + 2], lo[k + 2], hi[k + 2])
            a3 += _gap(q[k + 3], lo[k + 3], hi[k + 3])
        for k in range(m, n):
            a0 += _gap(q[k], lo[k], hi[k])
    return (a0 + a1) + (a2 + a3)


@njit(cache=True, nogil=True)
def _query_batch(X, perm, split_dim, split_val, left, right, start, end, lo, hi,
                 Q, exclude, k, shrink, metric):
    nq = Q.shape[0]
    out_ids = np.full((nq, k), -1, dtype=np.int64)
    out_keys = np.full((nq, k), np.inf)
    stack = np.empty(split_dim.shape[0] + 1, dtype=np.int64)
    visited = 0
    for qi in range(nq):
        q = Q[qi]
        keys = out_keys[qi]
        ids = out_ids[qi]
        ex = exclude[qi]
        cnt = 0
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            g = stack[sp]
            if cnt == k:
                if _box_key(lo[g], hi[g], q, metric) > keys[k - 1] / shrink:
                    continue
            visited += 1
            dim = split_dim[g]
            if dim < 0:
                for m in range(start[g], end[g]):
                    j = perm[m]
                    if j != ex:
                        cnt = _kernels.offer(keys, ids, cnt, X[j], q, metric, j)
            elif q[dim] < split_val[g]:
                stack[sp] = right[g]
                stack[sp + 1] = left[g]
                sp += 2
            else:
                stack[sp] = left[g]
                stack[sp + 1] = right[g]
                sp += 2
    return out_ids, out_keys, visited


def kdtree_query_batch(tree: KdTree, queries, k: int, epsilon: float = 0.0, exclude=None):
    """Query many points at once; returns (indices, distances, nodes_visited).

    ``exclude`` gives, per query, a point index to skip (-1 for none); used
    when the queries are the indexed points themselves.
    """
    Q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    if epsilon < 0:
        raise InvalidParameter("epsilon must be >= 0")
    exclude = np.full(Q.shape[0], -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
    avail = tree.points.shape[0] - int(np.any(exclude >= 0))
    if k < 1 or k > avail:
        raise InvalidParameter(f"K={k} exceeds the {avail} searchable points")
    # pruning radius is delta*/(1+eps); compared in key units
    shrink = (1.0 + epsilon) ** 2 if tree.metric is Metric.EUCLIDEAN else 1.0 + epsilon
    ids, keys, visited = _query_batch(tree.points, tree.perm, tree.split_dim, tree.split_val,
                                      tree.left, tree.right, tree.start, tree.end, tree.lo, tree.hi,
                                      Q, exclude, int(k), float(shrink), tree.metric.code)
    return ids, tree.metric.key_to_distance(keys), int(visited)


def kdtree_query(tree: KdTree, q, k: int, epsilon: float = 0.0, exclude: int = -1):
    ids, dist, _ = kdtree_query_batch(tree, np.asarray(q, dtype=float)[None, :], k, epsilon,
                                      exclude=[exclude])
    return ids[0], dist[0]
