from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monochain import (ConeOrder, UsageError, boxes_comparable, cone_boundary_distance, cone_leq, cone_ll,
                       is_unordered, order_hull_contains, order_interval_contains, ordered_pair)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)


def test_cone_leq_examples():
    assert cone_leq((1, 2), (1, 2))
    assert cone_leq((0, 0), (1, 1))
    assert not cone_leq((1, 0), (0, 1))


def test_cone_ll_examples():
    assert cone_ll((0, 0), (1, 1))
    assert not cone_ll((0, 0), (1, 0))
    assert not cone_ll((0, 0), (0.05, 0.05), ConeOrder(strict_margin=0.1))


def test_dimension_mismatch_is_usage_error():
    with pytest.raises(UsageError):
        cone_leq((0, 0), (1, 1, 1))
    with pytest.raises(UsageError):
        cone_ll((0,), (1, 1))
    with pytest.raises(UsageError):
        ConeOrder(strict_margin=-1.0)


def test_is_unordered_examples():
    assert is_unordered([(0, 0)]) == (True, None)
    assert is_unordered([(0, 1), (1, 0)])[0]
    ok, pair = is_unordered([(0, 0), (1, 1)])
    assert not ok
    np.testing.assert_array_equal(pair[0], (0, 0))
    np.testing.assert_array_equal(pair[1], (1, 1))
    with pytest.raises(UsageError):
        is_unordered(np.zeros((0, 2)))


def test_ordered_pair_respects_margin():
    pts = [(0, 0), (0.05, 0.05)]
    assert ordered_pair(pts) is not None
    assert ordered_pair(pts, ConeOrder(strict_margin=0.1)) is None


def test_reversed_order_swaps_roles():
    rev = ConeOrder(reversed=True)
    assert cone_leq((1, 1), (0, 0), rev)
    assert not cone_leq((0, 0), (1, 1), rev)
    p, q = ordered_pair([(0, 0), (1, 1)], rev)
    np.testing.assert_array_equal(p, (1, 1))


def test_order_interval_examples():
    assert order_interval_contains((0, 0), (1, 1), (0.5, 0.5))
    assert not order_interval_contains((0, 0), (1, 1), (2, 0.5))
    assert order_interval_contains((3, 3), (3, 3), (3, 3))


def test_order_hull_examples():
    assert order_hull_contains([(0, 0)], [(1, 1)], (0.3, 0.9))
    assert not order_hull_contains([(0, 0)], [(1, 1)], (-0.1, 0.5))
    assert order_hull_contains([(0, 0), (2, 0)], [(1, 1), (3, 1)], (2.5, 0.5))
    with pytest.raises(UsageError):
        order_hull_contains(np.zeros((0, 2)), [(1, 1)], (0, 0))


def _sampled_boundary_distance(e: np.ndarray, rng, n: int = 20000) -> float:
    # Minimize the max-norm distance over random points of {y >= 0, min_i y_i = 0}.
    d = e.size
    Y = rng.uniform(0, 2 * np.abs(e).max() + 1, size=(n, d))
    Y[np.arange(n), rng.integers(0, d, n)] = 0.0
    # plus the exact projections onto each face
    faces = np.repeat(np.maximum(e, 0)[None, :], d, axis=0)
    faces[np.arange(d), np.arange(d)] = 0.0
    Y = np.vstack([Y, faces])
    return float(np.abs(Y - e).max(axis=1).min())


def test_cone_boundary_distance_matches_sampled_oracle():
    rng = np.random.default_rng(1)
    assert cone_boundary_distance((2, 3)) == 2.0
    assert cone_boundary_distance((1, 1, 1)) == 1.0
    assert cone_boundary_distance((-1, 5)) == 0.0
    for e in [(2.0, 3.0), (1.0, 1.0, 1.0)]:
        assert _sampled_boundary_distance(np.array(e), rng) == pytest.approx(cone_boundary_distance(e), abs=1e-9)


def test_boundary_distance_grows_along_cone():
    # distance from e + x to the boundary is at least the distance from e
    rng = np.random.default_rng(2)
    for _ in range(1000):
        e = rng.uniform(0.01, 3, 3)
        x = rng.uniform(0, 3, 3)
        assert cone_boundary_distance(e + x) >= cone_boundary_distance(e)


def test_cone_leq_partial_order_on_random_triples():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 3, size=(10_000, 3, 2)).astype(float)
    for x, y, z in X:
        assert cone_leq(x, x)
        if cone_leq(x, y) and cone_leq(y, x):
            assert np.array_equal(x, y)
        if cone_leq(x, y) and cone_leq(y, z):
            assert cone_leq(x, z)


@given(vec3, vec3)
def test_ll_implies_leq_and_distinct(x, y):
    if cone_ll(x, y):
        assert cone_leq(x, y) and not np.array_equal(x, y)


@settings(max_examples=60)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=12), st.randoms())
def test_unordered_is_permutation_and_subset_stable(pts, rnd):
    P = np.array(pts)
    ok, _ = is_unordered(P)
    perm = list(range(len(P)))
    rnd.shuffle(perm)
    assert is_unordered(P[perm])[0] == ok
    if ok and len(P) > 1:
        assert is_unordered(P[: len(P) // 2 + 1])[0]


@settings(max_examples=60)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=5),
       st.lists(st.tuples(finite, finite), min_size=1, max_size=5),
       st.tuples(finite, finite))
def test_hull_equals_union_of_intervals(A, B, x):
    brute = any(order_interval_contains(a, b, x) for a, b in itertools.product(A, B))
    assert order_hull_contains(A, B, x) == brute


def test_boxes_comparable():
    assert boxes_comparable((0, 0), (1, 1), (2, 2), (3, 3))
    assert boxes_comparable((0, 0), (1, 1), (0.5, -5), (0.6, 0.1))
    assert not boxes_comparable((0, 2), (1, 3), (2, 0), (3, 1))
