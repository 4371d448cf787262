import warnings

import numpy as np
import pytest

from annmanifold.core import PointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cloud(rng):
    return PointCloud(rng.standard_normal((120, 6)))


@pytest.fixture
def rectangle():
    """400 points uniform on [0, 2] x [0, 1], rigidly rotated into R^5."""
    r = np.random.default_rng(0)
    T = r.uniform(0.0, 1.0, (400, 2)) * np.array([2.0, 1.0])
    Q, _ = np.linalg.qr(r.standard_normal((5, 5)))
    X = T @ Q[:, :2].T + r.standard_normal(5)
    return PointCloud(X), T


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def sort_oracle(X, k, metric="euclidean"):
    """K nearest by sorting all distances; ties to the smaller index."""
    n = X.shape[0]
    ids = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for i in range(n):
        diff = X - X[i]
        d = np.sqrt((diff ** 2).sum(1)) if metric == "euclidean" else np.abs(diff).sum(1)
        order = sorted((d[j], j) for j in range(n) if j != i)[:k]
        ids[i] = [j for _, j in order]
        dist[i] = [v for v, _ in order]
    return ids, dist
