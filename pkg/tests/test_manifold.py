import warnings

import numpy as np
import pytest
from scipy import sparse
from scipy.spatial.transform import Rotation

from annmanifold.core import NeighborGraph, PointCloud, brute_force_knn, pairwise_distances
from annmanifold.errors import InvalidInput, InvalidParameter, InvalidState, NumericalFailure
from annmanifold.manifold import (ALGORITHMS, classical_mds, components, embed, geodesic_distances, graph_laplacian,
                                  hessian_lle, hessian_matrix, isomap, laplacian_eigenmaps, largest_component, lle,
                                  reconstruction_weights, symmetric_adjacency)
from annmanifold.manifold import eigen
from annmanifold.quality import quality_report


def graph_from_lists(nbrs, weights=None):
    """NeighborGraph from equal-length neighbor lists (distances default 1)."""
    idx = np.array(nbrs)
    w = np.ones(idx.shape) if weights is None else np.array(weights, dtype=float)
    order = np.argsort(w, axis=1, kind="stable")
    return NeighborGraph(np.take_along_axis(idx, order, 1), np.take_along_axis(w, order, 1))


def ring(n):
    return graph_from_lists([[(i - 1) % n, (i + 1) % n] for i in range(n)])


def floyd_warshall(W):
    n = W.shape[0]
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    r, c = W.nonzero()
    D[r, c] = np.minimum(D[r, c], np.asarray(W[r, c]).ravel())
    for m in range(n):
        D = np.minimum(D, D[:, m:m + 1] + D[m:m + 1, :])
    return D


def affine_r2(Y, T):
    A = np.c_[Y, np.ones(len(Y))]
    coef, *_ = np.linalg.lstsq(A, T, rcond=None)
    res = ((T - A @ coef) ** 2).sum(0)
    tot = ((T - T.mean(0)) ** 2).sum(0)
    return float((1 - res / tot).min())


class TestGraphs:
    def test_union_symmetrization(self):
        g = graph_from_lists([[1], [2], [1]], [[1.0], [2.0], [2.0]])
        W = symmetric_adjacency(g).toarray()
        assert np.array_equal(W, W.T)
        assert W[0, 1] == 1.0 and W[1, 2] == 2.0 and W[0, 2] == 0.0

    def test_short_rows_rejected(self):
        g = NeighborGraph([[1], [-1]], [[1.0], [np.inf]], short=[False, True])
        with pytest.raises(InvalidInput):
            symmetric_adjacency(g)

    def test_path_graph(self):
        g = graph_from_lists([[1], [0], [1]])
        assert geodesic_distances(g).dist[0, 2] == 2.0

    def test_complete_graph_equals_inputs(self, rng):
        X = rng.standard_normal((15, 3))
        geo = geodesic_distances(brute_force_knn(X, 14))
        # a direct edge is never longer than a detour, up to rounding
        np.testing.assert_allclose(geo.dist, pairwise_distances(X), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_floyd_warshall_integer_weights(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(20, 101))
        k = 3
        nbrs = [r.choice(np.delete(np.arange(n), i), k, replace=False) for i in range(n)]
        g = graph_from_lists(nbrs, r.integers(1, 10, (n, k)))
        geo = geodesic_distances(g)
        assert np.array_equal(geo.dist, floyd_warshall(symmetric_adjacency(g)))
        assert np.array_equal(geo.dist, geo.dist.T)

    def test_zero_length_edges_count(self):
        g = graph_from_lists([[1], [0], [1]], [[0.0], [0.0], [3.0]])
        assert geodesic_distances(g).dist[0, 2] == 3.0

    def test_disconnected_labels(self):
        g = graph_from_lists([[1], [0], [3], [2], [3]])
        geo = geodesic_distances(g)
        assert not geo.connected
        assert geo.reachable(0, 1) and not geo.reachable(0, 2)
        assert np.isinf(geo.dist[0, 2])
        assert largest_component(components(g)).tolist() == [2, 3, 4]

    def test_largest_component_tie(self):
        labels = np.array([1, 1, 0, 0])
        assert largest_component(labels).tolist() == [0, 1]

    def test_laplacian_properties(self, rng):
        g = brute_force_knn(rng.standard_normal((60, 3)), 4)
        lap = graph_laplacian(g)
        L = lap.L.toarray()
        assert np.allclose(L, L.T)
        assert np.abs(L.sum(1)).max() < 1e-12
        assert np.linalg.eigvalsh(L).min() > -1e-10

    def test_zero_eigenvalues_count_components(self):
        g = graph_from_lists([[1], [0], [3], [2], [3]])
        vals = np.linalg.eigvalsh(graph_laplacian(g).L.toarray())
        assert (np.abs(vals) < 1e-10).sum() == 2

    def test_heat_limit(self, rng):
        g = brute_force_knn(rng.standard_normal((30, 2)), 3)
        heat = graph_laplacian(g, "heat", sigma=1e8).W.toarray()
        binary = graph_laplacian(g).W.toarray()
        np.testing.assert_allclose(heat, binary, atol=1e-12)

    @pytest.mark.parametrize("weights, sigma", [("heat", None), ("heat", -1.0), ("gauss", 1.0)])
    def test_bad_weights(self, weights, sigma):
        with pytest.raises(InvalidParameter):
            graph_laplacian(ring(5), weights, sigma)


class TestEigen:
    def test_sparse_path_matches_dense(self, rng):
        g = brute_force_knn(rng.standard_normal((300, 3)), 6)
        lap = graph_laplacian(g)
        dense_vals, _ = eigen.smallest(lap.L.toarray(), 4, lap.D.toarray())
        old = eigen.DENSE_LIMIT
        eigen.DENSE_LIMIT = 10
        try:
            vals, vecs = eigen.smallest(lap.L, 4, lap.D)
        finally:
            eigen.DENSE_LIMIT = old
        np.testing.assert_allclose(vals, dense_vals, atol=1e-9)
        eigen.check_residual(lap.L, vals, vecs, lap.D)

    def test_fix_signs(self):
        V = np.array([[0.1, -0.2], [-0.9, 0.1]])
        assert np.array_equal(eigen.fix_signs(V), [[-0.1, 0.2], [0.9, -0.1]])

    def test_residual_failure(self):
        with pytest.raises(NumericalFailure):
            eigen.check_residual(np.diag([1.0, 2.0]), np.array([1.5]), np.array([[1.0], [0.0]]))


class TestMds:
    def test_equilateral(self):
        D = np.ones((3, 3)) - np.eye(3)
        Y = classical_mds(D, 2).coords
        out = pairwise_distances(Y)
        assert np.abs(out[np.triu_indices(3, 1)] - 1.0).max() < 1e-9

    def test_line(self):
        x = np.array([0.0, 1.0, 3.0, 7.0])
        Y = classical_mds(np.abs(x[:, None] - x[None]), 1).coords[:, 0]
        fit = Y if np.corrcoef(Y, x)[0, 1] > 0 else -Y
        np.testing.assert_allclose(fit - fit.mean(), x - x.mean(), atol=1e-9)

    def test_round_trip(self, rng):
        X = rng.standard_normal((20, 4))
        Y = classical_mds(pairwise_distances(X), 4).coords
        np.testing.assert_allclose(pairwise_distances(Y), pairwise_distances(X), atol=1e-8)

    def test_descending_columns(self, rng):
        X = rng.standard_normal((30, 3)) * [5.0, 2.0, 0.5]
        emb = classical_mds(pairwise_distances(X), 3)
        assert np.all(np.diff(emb.eigenvalues) <= 0)
        assert np.all(np.diff(emb.coords.var(0)) <= 0)

    def test_zero_padding_warns(self):
        x = np.array([0.0, 1.0, 2.0])
        with pytest.warns(RuntimeWarning):
            emb = classical_mds(np.abs(x[:, None] - x[None]), 2)
        assert np.all(emb.coords[:, 1] == 0.0)

    @pytest.mark.parametrize("D", [np.ones((2, 3)), np.array([[0.0, 1], [2, 0]]), np.array([[1.0, 1], [1, 1]]),
                                   np.array([[0.0, np.inf], [np.inf, 0]])])
    def test_rejects(self, D):
        with pytest.raises(InvalidInput):
            classical_mds(D, 1)


class TestIsomap:
    def test_circle_order(self):
        n = 60
        th = 2 * np.pi * np.arange(n) / n
        X = np.c_[np.cos(th), np.sin(th), np.zeros(n)]
        Y = isomap(X, brute_force_knn(X, 4), 2).coords
        ang = np.unwrap(np.arctan2(Y[:, 1], Y[:, 0]))
        step = np.diff(np.r_[ang, ang[0] + np.sign(ang[-1] - ang[0]) * 2 * np.pi])
        assert np.all(step > 0) or np.all(step < 0)

    def test_complete_graph_is_mds(self, rng):
        X = rng.standard_normal((25, 3))
        a = isomap(X, brute_force_knn(X, 24), 3)
        b = classical_mds(pairwise_distances(X), 3)
        np.testing.assert_allclose(np.abs(a.coords), np.abs(b.coords), atol=1e-9)

    def test_disconnected_drops(self, rng, quiet):
        X = np.r_[rng.standard_normal((20, 2)), rng.standard_normal((5, 2)) + 100]
        emb = isomap(X, brute_force_knn(X, 3), 2)
        assert emb.n == 20 and emb.dropped == tuple(range(20, 25))
        assert emb.indices.tolist() == list(range(20))

    def test_component_too_small(self, quiet):
        X = np.array([[0.0], [1.0], [50.0], [51.0]])
        with pytest.raises(InvalidState):
            isomap(X, brute_force_knn(X, 1), 2)


class TestLle:
    def test_collinear_reconstruction(self):
        x = np.linspace(0, 1, 30)
        X = np.c_[x, 2 * x]
        g = brute_force_knn(X, 4)
        W = reconstruction_weights(X, g, reg=1e-9)
        res = np.linalg.norm(X - W @ X, axis=1)
        assert res[3:-3].max() < 1e-9

    def test_rows_sum_to_one(self, rng):
        X = rng.standard_normal((300, 4))
        g = brute_force_knn(X, 8)
        W = reconstruction_weights(X, g)
        assert np.abs(np.asarray(W.sum(1)).ravel() - 1).max() < 1e-12
        nz = W.tolil().rows
        assert all(set(r) <= set(g.indices[i].tolist()) for i, r in enumerate(nz))

    def test_cost_matrix_spectrum(self, rng):
        X = rng.standard_normal((100, 3))
        W = reconstruction_weights(X, brute_force_knn(X, 6)).toarray()
        A = np.eye(100) - W
        vals, vecs = np.linalg.eigh(A.T @ A)
        assert vals.min() > -1e-10
        assert vals[0] < 1e-10
        v = vecs[:, 0] / vecs[0, 0]
        np.testing.assert_allclose(v, 1.0, atol=1e-6)

    def test_singular_without_reg(self):
        X = np.c_[np.linspace(0, 1, 20), np.zeros(20)]
        with pytest.raises(NumericalFailure, match="reg"):
            reconstruction_weights(X, brute_force_knn(X, 5), reg=0.0)

    def test_unit_variance(self, rectangle):
        cloud, _ = rectangle
        Y = lle(cloud, brute_force_knn(cloud, 10), 2).coords
        np.testing.assert_allclose(Y.mean(0), 0, atol=1e-10)
        np.testing.assert_allclose(Y.std(0), 1, atol=1e-10)

    def test_bad_reg(self, rng):
        X = rng.standard_normal((20, 2))
        with pytest.raises(InvalidParameter):
            lle(X, brute_force_knn(X, 4), 1, reg=-1.0)


class TestEigenmaps:
    @pytest.mark.parametrize("n", [16, 64])
    def test_ring_spectrum(self, n):
        emb = laplacian_eigenmaps(ring(n), 4)
        k = np.array([1, 1, 2, 2])
        np.testing.assert_allclose(emb.eigenvalues, 1 - np.cos(2 * np.pi * k / n), atol=1e-8)
        Y = emb.coords[:, :2]
        r = np.hypot(Y[:, 0], Y[:, 1])
        np.testing.assert_allclose(r, r.mean(), rtol=1e-6)

    def test_ring_unnormalized_spectrum(self):
        L = graph_laplacian(ring(64)).L.toarray()
        vals = np.linalg.eigvalsh(L)[1:5]
        k = np.array([1, 1, 2, 2])
        np.testing.assert_allclose(vals, 2 - 2 * np.cos(2 * np.pi * k / 64), atol=1e-8)

    def test_constant_in_kernel(self, rng):
        lap = graph_laplacian(brute_force_knn(rng.standard_normal((40, 2)), 5))
        assert np.abs(lap.L @ np.ones(40)).max() < 1e-12

    def test_d_orthonormal(self, rng):
        g = brute_force_knn(rng.standard_normal((80, 3)), 6)
        Y = laplacian_eigenmaps(g, 3).coords
        D = graph_laplacian(g).D.toarray()
        np.testing.assert_allclose(Y.T @ D @ Y, np.eye(3), atol=1e-8)

    def test_d_too_large(self):
        with pytest.raises(InvalidParameter):
            laplacian_eigenmaps(ring(5), 5)


class TestHessian:
    def test_recovers_flat_strip(self, rectangle):
        cloud, T = rectangle
        Y = hessian_lle(cloud, brute_force_knn(cloud, 12), 2).coords
        assert affine_r2(Y, T) > 0.99
        np.testing.assert_allclose(np.linalg.norm(Y, axis=0), np.sqrt(400), rtol=1e-10)

    def test_recovers_curled_strip(self):
        r = np.random.default_rng(4)
        T = r.uniform(0, 1, (500, 2)) * [np.pi, 1.0]
        X = np.c_[np.cos(T[:, 0]), np.sin(T[:, 0]), T[:, 1]]
        Y = hessian_lle(X, brute_force_knn(X, 14), 2).coords
        assert affine_r2(Y, T) > 0.99

    def test_form_is_symmetric_psd(self, rng):
        X = rng.standard_normal((200, 3))
        H, skipped = hessian_matrix(X, brute_force_knn(X, 10), 2)
        H = H.toarray()
        assert not skipped
        assert np.abs(H - H.T).max() < 1e-12
        assert np.linalg.eigvalsh(H).min() > -1e-9
        assert np.abs(H @ np.ones(200)).max() < 1e-8

    def test_needs_enough_neighbors(self, rng):
        X = rng.standard_normal((50, 3))
        with pytest.raises(InvalidParameter):
            hessian_lle(X, brute_force_knn(X, 5), 2)

    def test_degenerate_neighborhoods(self):
        X = np.c_[np.linspace(0, 1, 60), np.zeros(60), np.zeros(60)]
        with pytest.raises(NumericalFailure), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            hessian_lle(X, brute_force_knn(X, 8), 2)


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_output_shape(rectangle, algorithm):
    cloud, _ = rectangle
    emb = embed(cloud, brute_force_knn(cloud, 12), algorithm, 2)
    assert emb.coords.shape == (400, 2)
    assert np.all(np.isfinite(emb.coords))
    assert emb.method == algorithm


def test_embed_unknown():
    with pytest.raises(InvalidParameter):
        embed(np.eye(3), ring(3), "tsne", 2)


@pytest.mark.parametrize("algorithm", ALGORITHMS)
def test_rigid_motion_invariance(algorithm):
    r = np.random.default_rng(7)
    T = r.uniform(0, 1, (150, 2))
    X = np.c_[T, 0.3 * np.sin(3 * T[:, 0]), 0.01 * r.standard_normal(150)]
    R = Rotation.random(random_state=3).as_matrix()
    shift = np.array([0.5, -1.0, 2.0])
    Xr = np.c_[X[:, :3] @ R.T + shift, X[:, 3]]
    reports = []
    for Z in (X, Xr):
        c = PointCloud(Z)
        emb = embed(c, brute_force_knn(c, 12), algorithm, 2)
        reports.append(quality_report(c, emb, 10))
    a, b = reports
    for name in ("lcmc", "trustworthiness", "continuity", "mrre_input", "mrre_output", "q_nx"):
        assert abs(getattr(a, name) - getattr(b, name)) < 1e-9, name
