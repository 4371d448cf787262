"""Compiled distance and selection kernels shared by every neighbor search.

All searches compare candidates by a *key*: the squared distance for the
euclidean metric and the plain L1 distance for manhattan.  Every code path
(brute force, k-d tree, forest, graph) evaluates keys with ``dist_key`` so
that ties and orderings agree bit for bit.
"""

import numpy as np
from numba import njit

EUCLIDEAN = 0
MANHATTAN = 1


@njit(cache=True, nogil=True)
def dist_key(x, y, metric):
    # Four interleaved partial sums, combined in a fixed order: breaks the
    # serial add chain while staying deterministic.  Any bound that must stay
    # below this value (k-d box keys) uses the same accumulation pattern.
    n = x.shape[0]
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    a3 = 0.0
    m = n - n % 4
    if metric == EUCLIDEAN:
        for k in range(0, m, 4):
            d0 = x[k] - y[k]
            d1 = x[k + 1] - y[k + 1]
            d2 = x[k + 2] - y[k + 2]
            d3 = x[k + 3] - y[k + 3]
            a0 += d0 * d0
            a1 += d1 * d1
            a2 += d2 * d2
            a3 += d3 * d3
        for k in range(m, n):
            d0 = x[k] - y[k]
            a0 += d0 * d0
    else:
        for k in range(0, m, 4):
            a0 += abs(x[k] - y[k])
            a1 += abs(x[k + 1] - y[k + 1])
            a2 += abs(x[k + 2] - y[k + 2])
            a3 += abs(x[k + 3] - y[k + 3])
        for k in range(m, n):
            a0 += abs(x[k] - y[k])
    return (a0 + a1) + (a2 + a3)


@njit(cache=True, nogil=True)
def dist_key_bounded(x, y, metric, bound):
    """``dist_key``, but may stop early once the key is known to exceed ``bound``.

    Uses the same accumulation order as ``dist_key``.  Partial sums of
    non-negative terms never exceed the final value in floating point, so
    the return value is either the exact key or some value above ``bound``.
    """
    n = x.shape[0]
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    a3 = 0.0
    m = n - n % 4
    k = 0
    while k < m:
        stop = min(k + 16, m)
        if metric == EUCLIDEAN:
            for t in range(k, stop, 4):
                d0 = x[t] - y[t]
                d1 = x[t + 1] - y[t + 1]
                d2 = x[t + 2] - y[t + 2]
                d3 = x[t + 3] - y[t + 3]
                a0 += d0 * d0
                a1 += d1 * d1
                a2 += d2 * d2
                a3 += d3 * d3
        else:
            for t in range(k, stop, 4):
                a0 += abs(x[t] - y[t])
                a1 += abs(x[t + 1] - y[t + 1])
                a2 += abs(x[t + 2] - y[t + 2])
                a3 += abs(x[t + 3] - y[t + 3])
        k = stop
        partial = (a0 + a1) + (a2 + a3)
        if partial > bound:
            return partial
    for t in range(m, n):
        d0 = x[t] - y[t]
        a0 += d0 * d0 if metric == EUCLIDEAN else abs(d0)
    return (a0 + a1) + (a2 + a3)


@njit(cache=True, nogil=True)
def offer(keys, ids, count, x, y, metric, idx):
    """Score ``x`` against ``y`` and insert it into the top-K buffers if it qualifies."""
    cap = keys.shape[0]
    bound = keys[cap - 1] if count == cap else np.inf
    return topk_insert(keys, ids, count, dist_key_bounded(x, y, metric, bound), idx)


@njit(cache=True, nogil=True, fastmath=True)
def dot_fast(x, y):
    acc = 0.0
    for k in range(x.shape[0]):
        acc += x[k] * y[k]
    return acc


@njit(cache=True, nogil=True)
def key_to_dist(key, metric):
    if metric == EUCLIDEAN:
        return np.sqrt(key)
    return key


@njit(cache=True, nogil=True)
def topk_insert(keys, ids, count, key, idx):
    """Insert (key, idx) into the ascending buffers if it beats the current worst.

    Order is lexicographic on (key, idx), i.e. ties go to the smaller index.
    Returns the new fill count.
    """
    cap = keys.shape[0]
    if count == cap:
        wk = keys[cap - 1]
        if key > wk or (key == wk and idx > ids[cap - 1]):
            return count
        pos = cap - 1
    else:
        pos = count
        count += 1
    while pos > 0:
        pk = keys[pos - 1]
        if pk > key or (pk == key and ids[pos - 1] > idx):
            keys[pos] = pk
            ids[pos] = ids[pos - 1]
            pos -= 1
        else:
            break
    keys[pos] = key
    ids[pos] = idx
    return count


@njit(cache=True, nogil=True)
def pairwise_keys(X, metric):
    n = X.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            k = dist_key(X[i], X[j], metric)
            out[i, j] = k
            out[j, i] = k
    return out


@njit(cache=True, nogil=True)
def keys_to_many(X, ids, q, metric):
    out = np.empty(ids.shape[0])
    for m in range(ids.shape[0]):
        out[m] = dist_key(X[ids[m]], q, metric)
    return out


@njit(cache=True, nogil=True)
def exact_rows_from_prefilter(X, rows, approx, thresh, K, metric):
    """Exact top-K per row among columns whose approximate key is under ``thresh``.

    ``approx`` is a chunk of approximate keys (self already set to +inf),
    ``rows`` the global row indices of the chunk.
    """
    m = rows.shape[0]
    out_ids = np.full((m, K), -1, dtype=np.int64)
    out_keys = np.full((m, K), np.inf)
    for r in range(m):
        i = rows[r]
        cnt = 0
        t = thresh[r]
        for j in range(approx.shape[1]):
            if j != i and approx[r, j] <= t:
                cnt = offer(out_keys[r], out_ids[r], cnt, X[j], X[i], metric, j)
    return out_ids, out_keys


@njit(cache=True, nogil=True)
def exact_rows_direct(X, rows, K, metric):
    m = rows.shape[0]
    n = X.shape[0]
    out_ids = np.full((m, K), -1, dtype=np.int64)
    out_keys = np.full((m, K), np.inf)
    for r in range(m):
        i = rows[r]
        cnt = 0
        for j in range(n):
            if j != i:
                cnt = offer(out_keys[r], out_ids[r], cnt, X[j], X[i], metric, j)
    return out_ids, out_keys
