from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from monochain import (MAP, SEMIFLOW, EscapeError, NotFound, NumericalError, TimeTMap, UsageError, builtin_systems,
                       evaluate_map, jacobian, lookup, make_map, map_points, system_names,
                       verify_strong_monotonicity, vector_field)
from monochain.systems import _fd_jacobian, power

A = np.array([[0.5, 0.25], [0.25, 0.5]])


def test_registry_contents():
    assert {"linear-contraction", "diagonal-tanh", "bistable-coop", "coop-3d", "henon"} <= set(system_names())
    tanh = lookup("diagonal-tanh")
    assert tanh.kind == SEMIFLOW and tanh.dimension == 2
    h = lookup("henon")
    assert h.kind == MAP and h.dimension == 2
    assert lookup("coop-3d").dimension == 3
    np.testing.assert_array_equal(lookup("linear-contraction").lower, [-1, -1])
    assert set(builtin_systems()) == set(system_names())


def test_lookup_errors():
    with pytest.raises(NotFound):
        lookup("no-such-system")
    with pytest.raises(UsageError):
        lookup("henon", bogus=1.0)


def test_evaluate_trivial_cases():
    np.testing.assert_array_equal(evaluate_map(lookup("linear-contraction"), (0, 0)), (0, 0))
    T = TimeTMap(lookup("diagonal-tanh"), 1.7)
    for c in (-1.5, 0.0, 0.3, 1.9):
        np.testing.assert_allclose(evaluate_map(T, (c, c)), (c, c), atol=1e-14)


def test_diagonal_tanh_converges_to_midpoint():
    # oracle: a long run at half the step must agree
    sys_ = lookup("diagonal-tanh")
    x = evaluate_map(TimeTMap(sys_, 30.0), (1.0, 0.0))
    x_half = evaluate_map(TimeTMap(sys_, 30.0, integrator_step=5e-3), (1.0, 0.0))
    np.testing.assert_allclose(x, (0.5, 0.5), atol=1e-6)
    np.testing.assert_allclose(x, x_half, atol=1e-9)


def test_rk4_matches_adaptive_reference():
    sys_ = lookup("bistable-coop")
    x0 = np.array([0.3, -0.8])
    ref = solve_ivp(lambda t, y: vector_field(sys_, y), (0, 2.0), x0, rtol=1e-12, atol=1e-12).y[:, -1]
    np.testing.assert_allclose(evaluate_map(TimeTMap(sys_, 2.0), x0), ref, atol=1e-8)


def test_semigroup_property():
    rng = np.random.default_rng(0)
    sys_ = lookup("bistable-coop")
    T1, T2 = TimeTMap(sys_, 0.7), TimeTMap(sys_, 1.3)
    T12 = TimeTMap(sys_, 2.0)
    X = rng.uniform(-1.8, 1.8, (100, 2))
    Y12, _ = map_points(T12, X)
    Y, _ = map_points(T2, map_points(T1, X)[0])
    # both sides take the same RK4 steps, so agreement is far inside 10x the O(h^4) error
    np.testing.assert_allclose(Y, Y12, atol=1e-9)


def test_escape_is_reported():
    grow = make_map("grow", lambda X: 3.0 * X, (-1, -1), (1, 1))
    with pytest.raises(EscapeError) as info:
        evaluate_map(grow, (0.9, 0.0))
    assert info.value.point is not None
    # inside the 10% inflation is tolerated
    np.testing.assert_allclose(evaluate_map(grow, (0.35, 0.0)), (1.05, 0.0))


def test_jacobian_examples():
    np.testing.assert_allclose(jacobian(lookup("linear-contraction"), (0.3, -0.2)), A)
    field_jac = jacobian(lookup("diagonal-tanh"), (0, 0))
    np.testing.assert_allclose(field_jac, [[-1, 1], [1, -1]])
    J = jacobian(TimeTMap(lookup("diagonal-tanh"), 1.0), (0, 0))
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(J).real), [np.exp(-2.0), 1.0], atol=1e-4)


def test_jacobian_non_finite_is_numerical_error():
    bad = make_map("bad", lambda X: X, (-1, -1), (1, 1), jac=lambda X: np.full((len(X), 2, 2), np.nan))
    with pytest.raises(NumericalError):
        jacobian(bad, (0, 0))


@pytest.mark.parametrize("name", ["linear-contraction", "diagonal-tanh", "bistable-coop", "coop-3d", "henon"])
def test_finite_difference_matches_analytic(name):
    sys_ = lookup(name)
    rng = np.random.default_rng(5)
    X = rng.uniform(sys_.lower * 0.9, sys_.upper * 0.9, (50, sys_.dimension))
    analytic = sys_.jac(X)
    fd = _fd_jacobian(sys_.rhs, X)
    scale = np.maximum(np.abs(analytic).max(axis=(1, 2)), 1.0)[:, None, None]
    assert np.max(np.abs(fd - analytic) / scale) < 1e-4


def test_time_t_jacobian_matches_finite_differences():
    T = TimeTMap(lookup("coop-3d"), 1.0)
    x = np.array([0.2, -0.4, 0.7])
    J = jacobian(T, x)
    h = 1e-6
    fd = np.column_stack([(evaluate_map(T, x + h * e) - evaluate_map(T, x - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(J, fd, atol=1e-7)


def test_power_chain_rule():
    S = lookup("linear-contraction")
    np.testing.assert_allclose(jacobian(power(S, 3), (0.1, 0.2)), np.linalg.matrix_power(A, 3))


@pytest.mark.parametrize("name", ["linear-contraction", "diagonal-tanh", "bistable-coop", "coop-3d"])
def test_monotone_systems_pass(name):
    rep = verify_strong_monotonicity(lookup(name), 1000, rng_seed=0)
    assert rep.passed, rep.message


def test_positive_matrix_passes():
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    sys_ = make_map("pos", lambda X: X @ M.T, (-1, -1), (1, 1), jac=lambda X: np.broadcast_to(M, (len(X), 2, 2)))
    assert verify_strong_monotonicity(sys_, 100).passed


def test_henon_fails_with_witness():
    rep = verify_strong_monotonicity(lookup("henon"), 1000, rng_seed=0)
    assert not rep.passed
    x = np.asarray(rep.witness_point)
    i, j = rep.witness_entry
    assert rep.witness_value <= 0
    assert lookup("henon").jac(x[None])[0, i, j] == pytest.approx(rep.witness_value)
    if (i, j) == (0, 0):
        assert rep.witness_value == pytest.approx(-2.8 * x[0])


def test_reducible_flow_fails():
    # cooperative but decoupled: the pattern is not strongly connected
    sys_ = lookup("linear-contraction")
    decoupled = type(sys_)("decoupled", SEMIFLOW, sys_.lower, sys_.upper, lambda X: -X,
                           lambda X: np.broadcast_to(-np.eye(2), (len(X), 2, 2)))
    rep = verify_strong_monotonicity(decoupled, 50)
    assert not rep.passed


def test_bistable_equilibria():
    a = brentq(lambda s: np.tanh(2 * s) - s, 0.5, 1.5)
    assert a == pytest.approx(0.9575, abs=1e-4)
    sys_ = lookup("bistable-coop")
    for p in [(0, 0), (a, a), (-a, -a)]:
        np.testing.assert_allclose(vector_field(sys_, p), 0, atol=1e-12)


@pytest.mark.parametrize("name,T", [("linear-contraction", None), ("diagonal-tanh", 0.1),
                                    ("bistable-coop", 0.5), ("coop-3d", 0.1)])
def test_strong_monotonicity_consequence(name, T):
    sys_ = lookup(name)
    S = sys_ if T is None else TimeTMap(sys_, T)
    rng = np.random.default_rng(7)
    n = sys_.dimension
    X = rng.uniform(sys_.lower * 0.8, sys_.upper * 0.8, (500, n))
    D = rng.uniform(0, 0.2, (500, n))
    D[np.arange(500), rng.integers(0, n, 500)] = 0.0  # x < y but not x << y
    D[D.sum(axis=1) == 0, 0] = 0.1
    Y = np.clip(X + D, sys_.lower, sys_.upper)
    SX, ex = map_points(S, X)
    SY, ey = map_points(S, Y)
    ok = ~(ex | ey) & np.any(Y > X, axis=1)
    assert ok.sum() > 450
    assert np.all(SY[ok] - SX[ok] > 0)


def test_diagonal_tanh_conserves_sum():
    sys_ = lookup("diagonal-tanh")
    rng = np.random.default_rng(8)
    X = rng.uniform(-1.9, 1.9, (50, 2))
    Y, _ = map_points(TimeTMap(sys_, 1.0), X)
    assert np.max(np.abs(Y.sum(axis=1) - X.sum(axis=1))) < 1e-8
