import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from annmanifold.ann import knn_graph
from annmanifold.core import brute_force_knn
from annmanifold.distributions import (DEFAULT_BINS, DEFAULT_PERIODS, BinGrid, bin_series, build_grid,
                                       household_cloud, household_distance, households_cloud, metric_for_mode,
                                       period_distributions, read_long_csv, slot_readings, stack_household,
                                       synthetic_household, synthetic_households, to_feature_vector,
                                       write_long_csv)
from annmanifold.errors import DegenerateGrid, FormatError, InvalidInput, InvalidParameter
from annmanifold.metrics import Metric, euclidean, hellinger, manhattan, total_variation


@pytest.fixture
def grid4():
    return build_grid([0.0, 4.0], 4)


class TestGrid:
    def test_small(self, grid4):
        assert grid4.edges.tolist() == [0, 1, 2, 3, 4]
        assert grid4.G == 4

    def test_default_bins(self):
        assert DEFAULT_BINS == 200
        assert build_grid([1.0, 2.0]).G == 200

    def test_uniform_spacing(self, rng):
        v = rng.gamma(2.0, 1.0, 5000)
        e = build_grid(v).edges
        assert e[0] == v.min() and e[-1] == v.max()
        d = np.diff(e)
        assert np.all(d > 0)
        assert np.abs(d - d.mean()).max() < 1e-12

    def test_order_invariant(self, rng):
        v = rng.standard_normal(1000)
        assert build_grid(v).same_as(build_grid(rng.permutation(v)))

    def test_ignores_missing(self):
        assert build_grid([np.nan, 0.0, 4.0], 4).edges.tolist() == [0, 1, 2, 3, 4]

    @pytest.mark.parametrize("values", [[2.0, 2.0], [np.nan], []])
    def test_degenerate(self, values):
        with pytest.raises(DegenerateGrid):
            build_grid(values, 4)

    def test_bad_g(self):
        with pytest.raises(InvalidParameter):
            build_grid([0.0, 1.0], 0)


class TestBinning:
    def test_quarters(self, grid4):
        d = bin_series([0.5, 1.5, 2.5, 3.5], grid4)
        assert d.pi.tolist() == [0.25] * 4 and d.support_count == 4

    def test_closure(self, grid4):
        assert bin_series([4.0], grid4).pi.tolist() == [0, 0, 0, 1]
        assert bin_series([0.0, 1.0], grid4).pi.tolist() == [0.5, 0.5, 0, 0]

    def test_missing(self, grid4):
        d = bin_series([np.nan, 0.5, np.nan, 3.5], grid4)
        assert d.pi.tolist() == [0.5, 0, 0, 0.5] and d.support_count == 2
        e = bin_series([np.nan, np.nan], grid4)
        assert e.empty and e.pi.tolist() == [0, 0, 0, 0]

    def test_outside(self, grid4):
        with pytest.raises(InvalidInput):
            bin_series([5.0], grid4)

    def test_mass(self, rng):
        v = rng.exponential(1.0, 10_000)
        assert abs(bin_series(v, build_grid(v)).pi.sum() - 1.0) < 1e-12

    @settings(max_examples=50)
    @given(arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e6, 1e6, allow_nan=False)))
    def test_mass_property(self, v):
        if v.min() == v.max():
            return
        pi = bin_series(v, build_grid(v, 17)).pi
        assert np.all(pi >= 0) and abs(pi.sum() - 1.0) < 1e-12


class TestFeatures:
    def test_hellinger_mode(self, grid4):
        d = bin_series([0.5, 1.5, 2.5, 3.5], grid4)
        assert to_feature_vector(d, "hellinger").tolist() == [0.5] * 4
        assert to_feature_vector(d, "tv").tolist() == d.pi.tolist()

    def test_empty_rejected(self, grid4):
        with pytest.raises(InvalidInput):
            to_feature_vector(bin_series([np.nan], grid4), "tv")

    def test_unknown_mode(self, grid4):
        with pytest.raises(InvalidParameter):
            to_feature_vector(bin_series([1.0], grid4), "js")

    def test_cross_module(self, rng):
        v = rng.exponential(1.0, 4000)
        grid = build_grid(v, 30)
        a, b = bin_series(v[:2000], grid), bin_series(v[2000:], grid)
        fa, fb = to_feature_vector(a), to_feature_vector(b)
        assert abs(euclidean(fa, fb) / np.sqrt(2) - hellinger(a.pi, b.pi)) < 1e-12
        assert abs(np.linalg.norm(fa) - 1.0) < 1e-12

    def test_metric_for_mode(self):
        assert metric_for_mode("tv") is Metric.MANHATTAN
        assert metric_for_mode("hellinger") is Metric.EUCLIDEAN


class TestStacking:
    def _household(self, r, grid, h):
        return [bin_series(r.uniform(0, 4, 50), grid) for _ in range(h)]

    def test_identical(self, rng, grid4):
        a = self._household(rng, grid4, 2)
        assert manhattan(stack_household(a).vector, stack_household(a).vector) == 0.0

    def test_single_period(self, rng, grid4):
        a, b = self._household(rng, grid4, 1), self._household(rng, grid4, 1)
        d = manhattan(stack_household(a).vector, stack_household(b).vector)
        assert d == pytest.approx(2 * total_variation(a[0].pi, b[0].pi), abs=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_three_periods(self, seed, grid4):
        r = np.random.default_rng(seed)
        a, b = self._household(r, grid4, 3), self._household(r, grid4, 3)
        sa, sb = stack_household(a), stack_household(b)
        assert abs(manhattan(sa.vector, sb.vector) - 2 * household_distance(a, b)) < 1e-12
        assert sa.H == 3 and sa.vector.size == 12
        for h in range(3):
            assert abs(sa.block(h).sum() - 1.0) < 1e-12

    def test_grid_mismatch(self, grid4):
        other = build_grid([0.0, 8.0], 4)
        with pytest.raises(InvalidInput):
            stack_household([bin_series([1.0], grid4), bin_series([1.0], other)])

    def test_empty_periods_flagged(self, grid4):
        st_ = stack_household([bin_series([1.0], grid4), bin_series([np.nan], grid4)])
        assert st_.empty_periods == (1,)

    def test_period_count_mismatch(self, grid4):
        with pytest.raises(InvalidInput):
            household_distance([bin_series([1.0], grid4)], [])


class TestHouseholds:
    def test_synthetic_shape_and_seed(self):
        a = synthetic_household(5, weeks=3)
        assert a.shape == (3 * DEFAULT_PERIODS,)
        assert np.array_equal(a, synthetic_household(5, weeks=3))
        assert not np.array_equal(a, synthetic_household(6, weeks=3))
        assert np.all(a > 0)

    def test_missing_rate(self):
        a = synthetic_household(1, weeks=10, missing_rate=0.1)
        assert 0.05 < np.isnan(a).mean() < 0.15

    def test_slots(self):
        s = np.arange(2 * DEFAULT_PERIODS, dtype=float)
        slots = slot_readings(s)
        assert len(slots) == 336 and slots[5].tolist() == [5.0, 341.0]

    def test_household_cloud(self):
        cloud, grid = household_cloud(synthetic_household(2), 200, "hellinger")
        assert cloud.points.shape == (336, 200)
        np.testing.assert_allclose(np.linalg.norm(cloud.points, axis=1), 1.0, atol=1e-12)

    def test_household_cloud_empty_slot(self):
        s = synthetic_household(2, weeks=2)
        s[7::336] = np.nan
        with pytest.raises(InvalidInput):
            household_cloud(s, 50)

    def test_hellinger_graph_matches_direct_oracle(self):
        series = synthetic_household(8, weeks=20)
        cloud, grid = household_cloud(series, 60, "hellinger")
        dists = period_distributions(series, grid)
        g = knn_graph(cloud, 10, "kdtree")
        for i in range(0, 336, 37):
            d = np.array([hellinger(dists[i].pi, dists[j].pi) if j != i else np.inf for j in range(336)])
            # short series give ties that rounding may order either way; compare values
            np.testing.assert_allclose(g.distances[i] / np.sqrt(2), np.sort(d)[:10], atol=1e-12)
            np.testing.assert_allclose(d[g.indices[i]], np.sort(d)[:10], atol=1e-12)

    def test_households_cloud_tv(self):
        data = synthetic_households(4, seed=1, weeks=4)
        cloud, grid = households_cloud(data, 40, "tv")
        assert cloud.ids == (1000, 1001, 1002, 1003)
        assert cloud.points.shape == (4, 336 * 40)
        dists = {k: period_distributions(v, grid) for k, v in data.items()}
        d = manhattan(cloud.points[0], cloud.points[2])
        assert abs(d - 2 * household_distance(dists[1000], dists[1002])) < 1e-12


class TestLongCsv:
    def test_round_trip(self, tmp_path):
        data = {7: np.array([0.5, np.nan, 1.25]), 3: np.array([2.0, 3.0])}
        write_long_csv(data, tmp_path / "d.csv")
        back = read_long_csv(tmp_path / "d.csv")
        assert set(back) == {3, 7}
        np.testing.assert_array_equal(back[7], data[7])
        np.testing.assert_array_equal(back[3], data[3])

    def test_gaps_are_missing(self, tmp_path):
        (tmp_path / "d.csv").write_text("id,period,value\nA,0,1.0\nA,2,3.0\n")
        assert np.isnan(read_long_csv(tmp_path / "d.csv")["A"][1])

    @pytest.mark.parametrize("text", ["a,b,c\n", "id,period,value\n1,x,2\n", "id,period,value\n1,2\n",
                                      "id,period,value\n1,-1,2\n", ""])
    def test_bad(self, tmp_path, text):
        (tmp_path / "d.csv").write_text(text)
        with pytest.raises(FormatError):
            read_long_csv(tmp_path / "d.csv")
