"""Locally linear embedding and its Hessian variant."""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg
from scipy import sparse

from annmanifold.core import Embedding, NeighborGraph, as_cloud
from annmanifold.errors import InvalidInput, InvalidParameter, NumericalFailure
from annmanifold.manifold import eigen
from annmanifold.manifold.graphs import _edges

MAX_SKIPPED = 0.10


def _neighbors(cloud, graph: NeighborGraph) -> np.ndarray:
    if graph.n != cloud.n:
        raise InvalidInput(f"graph has {graph.n} rows but the cloud has {cloud.n} points")
    _edges(graph)  # rejects short rows
    return graph.indices


def reconstruction_weights(cloud, graph: NeighborGraph, reg: float = 1e-3) -> sparse.csr_matrix:
    """Rows of W minimize ||x_i - sum_j w_ij x_j||^2 subject to sum_j w_ij = 1.

    The local Gram matrix is regularized by ``reg * trace``.  Weights may be
    negative; only the sum-to-one constraint is imposed.
    """
    cloud = as_cloud(cloud)
    nbrs = _neighbors(cloud, graph)
    if reg < 0:
        raise InvalidParameter("reg must be >= 0")
    X = cloud.points
    n, k = nbrs.shape
    if k < 2:
        raise InvalidParameter("LLE needs K >= 2")
    W = np.empty((n, k))
    ones = np.ones(k)
    for i in range(n):
        Z = X[nbrs[i]] - X[i]
        C = Z @ Z.T
        if reg > 0:
            tr = np.trace(C)
            C.flat[::k + 1] += reg * (tr if tr > 0 else 1.0)
        elif np.linalg.matrix_rank(C) < k:
            raise NumericalFailure(f"local Gram matrix of point {i} is singular; use reg > 0")
        try:
            w = scipy.linalg.solve(C, ones, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise NumericalFailure(f"local Gram solve failed at point {i}; use reg > 0") from exc
        W[i] = w / w.sum()
    return sparse.csr_matrix((W.ravel(), (np.repeat(np.arange(n), k), nbrs.ravel())), shape=(n, n))


def _bottom_embedding(M, d: int):
    """Eigenvectors 2..d+1 of M by ascending eigenvalue."""
    vals, vecs = eigen.smallest(M, d + 1)
    return vals[1:], vecs[:, 1:]


def lle(cloud, graph: NeighborGraph, d: int, reg: float = 1e-3) -> Embedding:
    """Locally linear embedding; each output coordinate has unit variance."""
    cloud = as_cloud(cloud)
    if d < 1 or d >= cloud.n:
        raise InvalidParameter(f"need 1 <= d < N, got d={d}")
    W = reconstruction_weights(cloud, graph, reg)
    IW = sparse.identity(cloud.n, format="csr") - W
    M = (IW.T @ IW).tocsr()
    M = 0.5 * (M + M.T)
    vals, Y = _bottom_embedding(M, d)
    Y = Y - Y.mean(axis=0)
    Y = eigen.fix_signs(Y / Y.std(axis=0))
    return Embedding(Y, eigenvalues=vals, method="lle")


def _quad_terms(T: np.ndarray) -> np.ndarray:
    d = T.shape[1]
    cols = [T[:, a] * T[:, b] for a in range(d) for b in range(a, d)]
    return np.column_stack(cols)


def hessian_matrix(cloud, graph: NeighborGraph, d: int, tol: float = 1e-10):
    """Accumulated N x N Hessian quadratic form and the list of skipped points.

    Each neighborhood contributes H^T H, where the rows of H are the
    orthonormalized quadratic columns of [1, T, quadratic(T)] and T holds
    the local tangent coordinates from an SVD of the centered neighbors.
    """
    cloud = as_cloud(cloud)
    nbrs = _neighbors(cloud, graph)
    n, k = nbrs.shape
    dp = d * (d + 1) // 2
    if k < dp + d + 1:
        raise InvalidParameter(f"Hessian LLE with d={d} needs K >= {dp + d + 1}, got K={k}")
    X = cloud.points
    rows, cols, vals = [], [], []
    skipped = []
    for i in range(n):
        nb = nbrs[i]
        G = X[nb] - X[nb].mean(axis=0)
        U, s, _ = np.linalg.svd(G, full_matrices=False)
        if s.size < d or s[d - 1] <= tol * max(s[0], np.finfo(float).tiny):
            skipped.append(i)
            continue
        T = U[:, :d]
        Z = np.column_stack([np.ones(k), T, _quad_terms(T)])
        Q, R = np.linalg.qr(Z)
        if np.abs(np.diag(R)).min() <= tol * np.abs(np.diag(R)).max():
            skipped.append(i)
            continue
        H = Q[:, d + 1:].T          # dp x K
        block = H.T @ H
        rows.append(np.repeat(nb, k))
        cols.append(np.tile(nb, k))
        vals.append(block.ravel())
    if skipped:
        warnings.warn(f"Hessian LLE skipped {len(skipped)} rank-deficient neighborhoods",
                      RuntimeWarning, stacklevel=2)
    if len(skipped) > MAX_SKIPPED * n:
        raise NumericalFailure(f"{len(skipped)} of {n} neighborhoods were rank deficient")
    Hm = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n)).tocsr()
    return 0.5 * (Hm + Hm.T), skipped


def hessian_lle(cloud, graph: NeighborGraph, d: int) -> Embedding:
    """Hessian eigenmaps; coordinates are unit-norm vectors scaled by sqrt(N)."""
    cloud = as_cloud(cloud)
    if d < 1 or d >= cloud.n:
        raise InvalidParameter(f"need 1 <= d < N, got d={d}")
    Hm, _ = hessian_matrix(cloud, graph, d)
    n = cloud.n
    vals, V = eigen.smallest(Hm, d + 1)
    # the null space holds the constant plus d coordinate functions; the
    # solver may mix them, so remove the constant and keep the dominant d
    V = V - V.mean(axis=0)
    U, _, _ = np.linalg.svd(V, full_matrices=False)
    Y = eigen.fix_signs(U[:, :d] * np.sqrt(n))
    return Embedding(Y, eigenvalues=vals[1:], method="hessian_lle")
