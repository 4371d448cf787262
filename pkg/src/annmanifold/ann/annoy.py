"""Random-hyperplane forest in the style of Annoy.

Every internal node splits its points by the hyperplane equidistant from two
randomly drawn members.  A query walks all trees through one shared priority
queue keyed by signed distance to the splitting hyperplanes.  Each pop
descends along the query's side to a leaf; every opposite side passed on the
way is queued with the (negative) distance to its plane.  Leaves are
collected until the de-duplicated candidate pool reaches ``search_k``, and
the candidates are then ranked by brute force.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from annmanifold import _kernels
from annmanifold.core import as_cloud
from annmanifold.errors import InvalidParameter
from annmanifold.metrics import Metric

MAX_RESAMPLE = 8
FLAG_AXIS = 1
FLAG_EVEN = 2


@dataclass(frozen=True)
class AnnoyForest:
    points: np.ndarray
    roots: np.ndarray
    normals: np.ndarray       # unit normals of internal nodes only, row ``row[g]``
    row: np.ndarray           # node -> normals row, -1 for leaves
    offsets: np.ndarray
    left: np.ndarray          # -1 marks a leaf
    right: np.ndarray
    start: np.ndarray
    end: np.ndarray
    perm: np.ndarray          # per-tree permutations, concatenated
    flags: np.ndarray         # FLAG_AXIS / FLAG_EVEN fallbacks
    n_trees: int
    kappa: int
    seed: int
    metric: Metric

    def tree_leaves(self, t: int) -> list[np.ndarray]:
        lo = self.roots[t]
        hi = self.roots[t + 1] if t + 1 < self.n_trees else self.left.shape[0]
        return [self.perm[self.start[g]:self.end[g]] for g in range(lo, hi) if self.left[g] < 0]

    def fingerprint(self) -> bytes:
        parts = (self.roots, self.normals, self.row, self.offsets, self.left, self.right,
                 self.start, self.end, self.perm, self.flags)
        return b"".join(np.ascontiguousarray(a).tobytes() for a in parts)


@njit(cache=True)
def _next(state):
    # splitmix64
    state[0] = state[0] + np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randint(state, n):
    return np.int64(_next(state) % np.uint64(n))


@njit(cache=True)
def _build_tree(X, kappa, seed, perm_offset):
    n, p = X.shape
    max_nodes = 2 * n + 1
    state = np.array([seed], dtype=np.uint64)
    perm = np.arange(n)
    normals = np.zeros((max_nodes, p))
    offsets = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    start = np.zeros(max_nodes, dtype=np.int64)
    end = np.zeros(max_nodes, dtype=np.int64)
    flags = np.zeros(max_nodes, dtype=np.int64)
    side = np.zeros(n, dtype=np.bool_)
    tmp = np.empty(n, dtype=np.int64)
    stack = np.empty(max_nodes, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    end[0] = n
    n_nodes = 1
    while sp > 0:
        sp -= 1
        g = stack[sp]
        s = start[g]
        e = end[g]
        cnt = e - s
        if cnt <= kappa:
            continue
        ok = False
        nleft = 0
        for attempt in range(1 + MAX_RESAMPLE):
            ia = _randint(state, cnt)
            ib = _randint(state, cnt - 1)
            if ib >= ia:
                ib += 1
            a = perm[s + ia]
            b = perm[s + ib]
            norm2 = 0.0
            off = 0.0
            for k in range(p):
                dk = X[a, k] - X[b, k]
                normals[g, k] = dk
                norm2 += dk * dk
                off += 0.5 * (X[a, k] * X[a, k] - X[b, k] * X[b, k])
            if norm2 == 0.0:
                continue
            nrm = np.sqrt(norm2)
            for k in range(p):
                normals[g, k] /= nrm
            offsets[g] = off / nrm
            nleft = 0
            for m in range(s, e):
                z = perm[m]
                mg = -offsets[g]
                for k in range(p):
                    mg += X[z, k] * normals[g, k]
                side[m - s] = mg > 0.0
                if mg > 0.0:
                    nleft += 1
            if 0 < nleft < cnt:
                ok = True
                break
        if not ok:
            # random-axis midpoint fallback
            for k in range(p):
                normals[g, k] = 0.0
            first = _randint(state, p)
            for t in range(p):
                axis = (first + t) % p
                mn = X[perm[s], axis]
                mx = mn
                for m in range(s + 1, e):
                    v = X[perm[m], axis]
                    if v < mn:
                        mn = v
                    if v > mx:
                        mx = v
                if mx > mn:
                    c = mn + (mx - mn) * 0.5
                    if not c < mx:
                        c = mn
                    normals[g, axis] = 1.0
                    offsets[g] = c
                    nleft = 0
                    for m in range(s, e):
                        side[m - s] = X[perm[m], axis] > c
                        if side[m - s]:
                            nleft += 1
                    flags[g] = FLAG_AXIS
                    ok = True
                    break
        if not ok:
            offsets[g] = 0.0
            nleft = cnt // 2
            for m in range(cnt):
                side[m] = m < nleft
            flags[g] = FLAG_EVEN
        li = 0
        ri = nleft
        for m in range(cnt):
            if side[m]:
                tmp[li] = perm[s + m]
                li += 1
            else:
                tmp[ri] = perm[s + m]
                ri += 1
        perm[s:e] = tmp[:cnt]
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
        stack[sp + 1] = lch
        sp += 2
    internal = np.flatnonzero(left[:n_nodes] >= 0)
    return (normals[internal].copy(), internal, offsets[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes] + perm_offset, end[:n_nodes] + perm_offset, perm, flags[:n_nodes])


def annoy_build(cloud, n_trees: int = 10, kappa: int = 16, seed: int = 0, metric="euclidean") -> AnnoyForest:
    cloud = as_cloud(cloud)
    if cloud.n < 2:
        raise InvalidParameter("a forest needs at least 2 points")
    if n_trees < 1 or kappa < 1:
        raise InvalidParameter("n_trees and kappa must be >= 1")
    tree_seeds = np.random.SeedSequence(int(seed)).generate_state(n_trees, dtype=np.uint64)
    parts = []
    n_before = 0
    rows_before = 0
    roots = []
    for t in range(n_trees):
        normals, internal, offsets, left, right, start, end, perm, flags = _build_tree(
            cloud.points, int(kappa), tree_seeds[t], t * cloud.n)
        roots.append(n_before)
        row = np.full(left.shape[0], -1, dtype=np.int64)
        row[internal] = np.arange(internal.shape[0]) + rows_before
        left = np.where(left >= 0, left + n_before, -1)
        right = np.where(right >= 0, right + n_before, -1)
        parts.append((normals, row, offsets, left, right, start, end, perm, flags))
        n_before += left.shape[0]
        rows_before += internal.shape[0]
    cat = [np.concatenate([pt[i] for pt in parts]) for i in range(9)]
    return AnnoyForest(cloud.points, np.array(roots, dtype=np.int64), *cat, n_trees=int(n_trees),
                       kappa=int(kappa), seed=int(seed), metric=Metric.parse(metric))


@njit(cache=True, nogil=True)
def _heap_push(prio, node, size, pr, nd):
    i = size
    prio[i] = pr
    node[i] = nd
    while i > 0:
        parent = (i - 1) >> 1
        if prio[parent] < prio[i]:
            prio[parent], prio[i] = prio[i], prio[parent]
            node[parent], node[i] = node[i], node[parent]
            i = parent
        else:
            break
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(prio, node, size):
    top_p = prio[0]
    top_n = node[0]
    size -= 1
    prio[0] = prio[size]
    node[0] = node[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        best = i
        if l < size and prio[l] > prio[best]:
            best = l
        if r < size and prio[r] > prio[best]:
            best = r
        if best == i:
            break
        prio[best], prio[i] = prio[i], prio[best]
        node[best], node[i] = node[i], node[best]
        i = best
    return top_p, top_n, size


@njit(cache=True, nogil=True)
def _query_batch(X, roots, normals, row, offsets, left, right, start, end, perm,
                 Q, exclude, k, search_k, max_queue, metric):
    n = X.shape[0]
    nq = Q.shape[0]
    out_ids = np.full((nq, k), -1, dtype=np.int64)
    out_keys = np.full((nq, k), np.inf)
    n_cand = np.zeros(nq, dtype=np.int64)
    cap = 2 * max_queue + left.shape[0] + 1  # room for one full descent past the trim point
    prio = np.empty(cap)
    node = np.empty(cap, dtype=np.int64)
    stamp = np.full(n, -1, dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    p = X.shape[1]
    q32 = np.empty(p, dtype=np.float32)
    for qi in range(nq):
        q = Q[qi]
        ex = exclude[qi]
        for k2 in range(p):
            q32[k2] = q[k2]
        size = 0
        for t in range(roots.shape[0]):
            size = _heap_push(prio, node, size, np.inf, roots[t])
        nc = 0
        while size > 0 and nc < search_k:
            d, g, size = _heap_pop(prio, node, size)
            # walk the near side down to a leaf, queueing each far side
            while left[g] >= 0:
                mg = _kernels.dot_fast(q32, normals[row[g]]) - offsets[g]
                if mg > 0.0:
                    size = _heap_push(prio, node, size, min(d, -mg), right[g])
                    d = min(d, mg)
                    g = left[g]
                else:
                    size = _heap_push(prio, node, size, min(d, mg), left[g])
                    d = min(d, -mg)
                    g = right[g]
            for m in range(start[g], end[g]):
                j = perm[m]
                if stamp[j] != qi and j != ex:
                    stamp[j] = qi
                    cand[nc] = j
                    nc += 1
            if size >= 2 * max_queue:
                # keep the max_queue best entries; a descending array is a valid max-heap
                order = np.argsort(-prio[:size], kind="mergesort")[:max_queue]
                kp = prio[:size][order].copy()
                kn = node[:size][order].copy()
                size = max_queue
                prio[:size] = kp
                node[:size] = kn
        n_cand[qi] = nc
        cnt = 0
        for m in range(nc):
            j = cand[m]
            cnt = _kernels.offer(out_keys[qi], out_ids[qi], cnt, X[j], q, metric, j)
    return out_ids, out_keys, n_cand


def annoy_query_batch(forest: AnnoyForest, queries, k: int, search_k: int, exclude=None,
                      max_queue: int | None = None):
    """Returns (indices, distances, short_mask, candidate_counts)."""
    Q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
    if k < 1:
        raise InvalidParameter("K must be >= 1")
    if search_k < k:
        raise InvalidParameter(f"search_k={search_k} must be >= K={k}")
    exclude = np.full(Q.shape[0], -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)
    max_queue = 2 * search_k if max_queue is None else int(max_queue)
    # margins only order the traversal, so single precision is enough there
    normals32 = forest.normals.astype(np.float32)
    ids, keys, n_cand = _query_batch(forest.points, forest.roots, normals32, forest.row, forest.offsets,
                                     forest.left, forest.right, forest.start, forest.end, forest.perm,
                                     Q, exclude, int(k), int(search_k), max(1, max_queue),
                                     forest.metric.code)
    short = (ids < 0).any(axis=1)
    return ids, forest.metric.key_to_distance(keys), short, n_cand


def annoy_query(forest: AnnoyForest, q, k: int, search_k: int, exclude: int = -1):
    ids, dist, short, _ = annoy_query_batch(forest, np.asarray(q, dtype=float)[None, :], k, search_k,
                                            exclude=[exclude])
    return ids[0], dist[0], bool(short[0])
