import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from annmanifold.errors import InvalidInput, InvalidParameter
from annmanifold.metrics import (Metric, check_pmf, euclidean, hellinger, hellinger_coords, manhattan,
                                 total_variation)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def pmfs(n):
    return arrays(np.float64, n, elements=st.floats(0, 1, allow_nan=False)).filter(lambda a: a.sum() > 1e-3).map(
        lambda a: a / a.sum())


@pytest.mark.parametrize("fn, expected", [(euclidean, 5.0), (manhattan, 7.0)])
def test_three_four(fn, expected):
    assert fn([0, 0], [3, 4]) == expected
    assert fn([3, 4], [3, 4]) == 0.0


def test_random_pair_matches_formula(rng):
    a, b = rng.standard_normal((2, 10))
    assert abs(euclidean(a, b) - math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))) < 1e-12
    assert abs(manhattan(a, b) - sum(abs(x - y) for x, y in zip(a, b))) < 1e-12


@pytest.mark.parametrize("fn", [euclidean, manhattan])
def test_length_mismatch(fn):
    with pytest.raises(InvalidInput):
        fn([0, 1], [0, 1, 2])


def test_nonfinite_rejected():
    with pytest.raises(InvalidInput):
        euclidean([0, np.nan], [0, 1])


@pytest.mark.parametrize("fn", [euclidean, manhattan])
def test_metric_axioms(fn, rng):
    P = rng.standard_normal((1000, 3, 4))
    for a, b, c in P:
        assert fn(a, b) >= 0
        assert fn(a, b) == fn(b, a)
        assert fn(a, c) <= fn(a, b) + fn(b, c) + 1e-12


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_symmetry_property(a, b):
    assert euclidean(a, b) == euclidean(b, a)
    assert manhattan(a, b) == manhattan(b, a)


def test_hellinger_examples():
    assert hellinger([1, 0], [0, 1]) == pytest.approx(1.0, abs=1e-15)
    assert hellinger([0.3, 0.7], [0.3, 0.7]) == 0.0
    direct = math.sqrt((math.sqrt(0.5) - 1) ** 2 + 0.5) / math.sqrt(2)
    assert hellinger([0.5, 0.5], [1, 0]) == pytest.approx(direct, abs=1e-15)
    assert round(hellinger([0.5, 0.5], [1, 0]), 4) == 0.5412


def test_total_variation_examples():
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert total_variation([0.5, 0.5], [1, 0]) == 0.5


def test_hellinger_coords_distance():
    p, q = np.array([0.2, 0.3, 0.5]), np.array([0.6, 0.1, 0.3])
    assert euclidean(hellinger_coords(p), hellinger_coords(q)) / math.sqrt(2) == pytest.approx(hellinger(p, q),
                                                                                                  abs=1e-15)


@settings(max_examples=200)
@given(pmfs(7), pmfs(7))
def test_bounded_and_direct(p, q):
    h, tv = hellinger(p, q), total_variation(p, q)
    assert 0.0 <= h <= 1.0 + 1e-12
    assert 0.0 <= tv <= 1.0 + 1e-12
    direct = math.sqrt(sum((math.sqrt(a) - math.sqrt(b)) ** 2 for a, b in zip(p, q)) / 2.0)
    assert abs(h - direct) < 1e-12


@pytest.mark.parametrize("bad", [[-0.1, 1.1], [0.5, 0.6], [0.5, 0.4]])
def test_check_pmf_rejects(bad):
    with pytest.raises(InvalidInput):
        check_pmf(bad)


def test_check_pmf_renormalizes_within_tolerance():
    p = check_pmf([0.5, 0.5 + 5e-10])
    assert abs(p.sum() - 1.0) < 1e-15


@pytest.mark.parametrize("text, metric", [("l2", Metric.EUCLIDEAN), ("L1", Metric.MANHATTAN),
                                          ("euclidean", Metric.EUCLIDEAN), (Metric.MANHATTAN, Metric.MANHATTAN)])
def test_parse(text, metric):
    assert Metric.parse(text) is metric


def test_parse_unknown():
    with pytest.raises(InvalidParameter):
        Metric.parse("cosine")
