"""Extreme eigenpairs of symmetric (and symmetric-definite generalized) problems.

Every solve is checked against a residual bound
``||A v - lam B v|| <= RESIDUAL_TOL * ||A||`` (1-norm), and columns get a
fixed sign so that repeated runs produce identical coordinates.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from annmanifold.errors import NumericalFailure

RESIDUAL_TOL = 1e-8
ZERO_TOL = 1e-9        # relative to the largest eigenvalue
DENSE_LIMIT = 3000     # above this many rows sparse shift-invert is used


def _norm1(A) -> float:
    if sparse.issparse(A):
        return float(abs(A).sum(axis=0).max())
    return float(np.abs(A).sum(axis=0).max())


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    sgn = np.sign(V[idx, np.arange(V.shape[1])])
    sgn[sgn == 0] = 1.0
    return V * sgn


def check_residual(A, vals, vecs, B=None) -> float:
    """Largest residual over the given pairs; raises if above the contract."""
    AV = A @ vecs
    BV = vecs if B is None else B @ vecs
    res = np.linalg.norm(AV - BV * vals, axis=0).max(initial=0.0)
    scale = max(_norm1(A), np.finfo(float).tiny)
    if not res <= RESIDUAL_TOL * scale:
        raise NumericalFailure(f"eigensolver residual {res:.3g} exceeds {RESIDUAL_TOL:g} x ||A|| = "
                               f"{RESIDUAL_TOL * scale:.3g}")
    return float(res)


def smallest(A, k: int, B=None):
    """The ``k`` smallest eigenpairs, ascending; vectors B-orthonormal."""
    n = A.shape[0]
    if k > n:
        raise NumericalFailure(f"requested {k} eigenpairs of a {n} x {n} problem")
    if n <= DENSE_LIMIT:
        Ad = A.toarray() if sparse.issparse(A) else np.asarray(A)
        Bd = None if B is None else (B.toarray() if sparse.issparse(B) else np.asarray(B))
        vals, vecs = scipy.linalg.eigh(Ad, Bd, subset_by_index=[0, k - 1])
    else:
        # shift just below zero so the positive semidefinite operator factors
        sigma = -1e-6 * _norm1(A) / n
        vals, vecs = splinalg.eigsh(sparse.csc_matrix(A), k=k, M=None if B is None else sparse.csc_matrix(B),
                                    sigma=sigma, which="LM", tol=1e-12, maxiter=10 * n)
        order = np.argsort(vals, kind="stable")
        vals, vecs = vals[order], vecs[:, order]
    check_residual(A, vals, vecs, B)
    return vals, vecs


def largest(A: np.ndarray, k: int):
    """The ``k`` largest eigenpairs of a dense symmetric matrix, descending."""
    n = A.shape[0]
    k = min(k, n)
    vals, vecs = scipy.linalg.eigh(A, subset_by_index=[n - k, n - 1])
    vals, vecs = vals[::-1], vecs[:, ::-1]
    check_residual(A, vals, vecs)
    return vals, vecs
