import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_are

from modeltransfer._backend import kernels
from modeltransfer.envs import random_lqr
from modeltransfer.errors import InvalidArgumentError, NotStabilizableError
from modeltransfer.models import LQRModel, TabularMDP
from modeltransfer.planning import (LQRGain, TabularPolicy, bellman_residual, closed_loop, lqr_value, plan_lqr,
                                    policy_evaluation, riccati_residual, solve_riccati, spectral_radius,
                                    value_iteration)

from conftest import random_tabular

GOLDEN = (1 + math.sqrt(5)) / 2


def sweep_evaluation(model, actions, sweeps=5000):
    # plain-Python Bellman sweeps, independent of the linear solve
    S = model.n_states
    V = [0.0] * S
    for _ in range(sweeps):
        V = [model.rewards[s, actions[s]] + model.discount * sum(model.transitions[s, actions[s], t] * V[t]
                                                                  for t in range(S)) for s in range(S)]
    return np.array(V)


def all_policies(S, A):
    return [np.array(p) for p in itertools.product(range(A), repeat=S)]


def test_zero_discount_is_greedy(rng):
    m = random_tabular(rng, 4, 3, discount=0.0)
    V, pol = value_iteration(m)
    np.testing.assert_allclose(V, m.rewards.max(axis=1))
    np.testing.assert_array_equal(pol.action, m.rewards.argmax(axis=1))


def test_absorbing_state_geometric_series():
    T = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
    R = np.array([[0.0], [1.0]])
    V, _ = value_iteration(TabularMDP(T, R, 0.5), tol=1e-10)
    assert V[1] == pytest.approx(2.0, abs=1e-9)
    assert V[0] == pytest.approx(1.0, abs=1e-9)


def test_value_iteration_dominates_all_policies(rng):
    m = random_tabular(rng, 4, 2)
    V, pol = value_iteration(m, tol=1e-10)
    np.testing.assert_allclose(policy_evaluation(m, pol), V, atol=1e-8)
    for p in all_policies(4, 2):
        assert np.all(V >= policy_evaluation(m, p) - 1e-8)


def test_policy_evaluation_examples(rng):
    one = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5)
    assert policy_evaluation(one, [0])[0] == pytest.approx(2.0)
    m = random_tabular(rng, 3, 2)
    a = np.array([1, 0, 1])
    np.testing.assert_allclose(policy_evaluation(m, a), sweep_evaluation(m, a), atol=1e-8)
    V, pol = value_iteration(m, tol=1e-8)
    np.testing.assert_allclose(policy_evaluation(m, pol), V, atol=2e-8)
    with pytest.raises(InvalidArgumentError):
        policy_evaluation(m, [0, 0])


def test_ties_go_to_lowest_action():
    m = TabularMDP(np.full((2, 3, 2), 0.5), np.full((2, 3), 0.3), 0.9)
    _, pol = value_iteration(m)
    np.testing.assert_array_equal(pol.action, [0, 0])


def test_bellman_residual_below_tol(rng):
    m = random_tabular(rng, 6, 3, discount=0.99)
    V, _ = value_iteration(m, tol=1e-6)
    assert bellman_residual(m, V) < 1e-6


@given(st.integers(0, 2**31 - 1))
def test_value_iteration_contracts(seed):
    m = random_tabular(np.random.default_rng(seed), 4, 2, discount=0.8)
    V = np.zeros(4)
    T, R = np.ascontiguousarray(m.transitions), np.ascontiguousarray(m.rewards)
    diffs = []
    for _ in range(20):
        prev = V.copy()
        kernels.value_iteration(T, R, m.discount, 0.0, 1, V)
        diffs.append(np.max(np.abs(V - prev)))
    for a, b in zip(diffs, diffs[1:]):
        assert b <= m.discount * a + 1e-12


@given(st.integers(0, 2**31 - 1), st.integers(2, 5), st.integers(2, 3))
def test_no_single_state_deviation_improves(seed, S, A):
    m = random_tabular(np.random.default_rng(seed), S, A)
    V, pol = value_iteration(m, tol=1e-10)
    base = policy_evaluation(m, pol)
    for s in range(S):
        for a in range(A):
            alt = pol.action.copy()
            alt[s] = a
            assert np.all(policy_evaluation(m, alt) <= base + 1e-8)


def test_riccati_scalar_cases():
    g = solve_riccati([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert g.P[0, 0] == pytest.approx(GOLDEN, abs=1e-6)
    assert g.K[0, 0] == pytest.approx(GOLDEN / (1 + GOLDEN), abs=1e-6)
    z = solve_riccati([[0.0]], [[1.0]], [[2.0]], [[1.0]])
    assert z.P[0, 0] == pytest.approx(2.0) and z.K[0, 0] == pytest.approx(0.0)


def random_stabilizable(rng, n, k):
    while True:
        F = rng.standard_normal((n, n)) * 0.6
        B = rng.standard_normal((n, k))
        ctrb = np.hstack([np.linalg.matrix_power(F, i) @ B for i in range(n)])
        if np.linalg.matrix_rank(ctrb) == n:
            return F, B


def test_riccati_against_scipy(rng):
    for n, k in ((2, 1), (4, 1), (6, 2)):
        F, B = random_stabilizable(rng, n, k)
        Q, R = np.eye(n), np.eye(k)
        g = solve_riccati(F, B, Q, R, tol=1e-11)
        ref = solve_discrete_are(F, B, Q, R)
        np.testing.assert_allclose(g.P, ref, rtol=1e-7, atol=1e-8)
        assert np.linalg.norm(riccati_residual(F, B, Q, R, g.P)) <= 1e-8
        assert spectral_radius(F - B @ g.K) < 1
        np.testing.assert_allclose(g.P, g.P.T, atol=1e-10)
        assert np.linalg.eigvalsh(g.P).min() >= -1e-10


def test_riccati_warm_start_converges_faster(rng):
    F, B = random_stabilizable(rng, 4, 1)
    cold = solve_riccati(F, B, np.eye(4), np.eye(1))
    warm = solve_riccati(F, B, np.eye(4), np.eye(1), P0=cold.P)
    assert warm.iterations < cold.iterations
    np.testing.assert_allclose(warm.K, cold.K, atol=1e-8)


def test_riccati_non_stabilizable_raises():
    F = np.array([[2.0, 0.0], [0.0, 0.5]])
    B = np.array([[0.0], [1.0]])  # unstable mode not reachable
    with pytest.raises(NotStabilizableError):
        solve_riccati(F, B, np.eye(2), np.eye(1), max_iter=500)


def test_riccati_shape_check():
    with pytest.raises(InvalidArgumentError):
        solve_riccati(np.eye(2), np.ones((3, 1)), np.eye(2), np.eye(1))


def test_lqr_value_examples():
    # increment form: F = I + A = 1 means A = 0
    m = LQRModel([[1.0, 0.0]], [[1.0]], [[1.0]], [[1.0]])
    g = plan_lqr(m)
    assert lqr_value(m, g, [0.0], 50) == 0.0
    assert lqr_value(m, g, [1.0], 400) == pytest.approx(GOLDEN, abs=1e-6)
    unstable = LQRModel([[1.0, 0.5]], [[1.0]], [[1.0]], [[1.0]])
    zero = LQRGain(np.zeros((1, 1)), None)
    costs = [lqr_value(unstable, zero, [1.0], h) for h in (10, 20, 40)]
    assert costs[0] < costs[1] < costs[2]


def test_plan_on_raw_a_flag():
    m = LQRModel([[1.0, 0.0]], [[1.0]], [[1.0]], [[1.0]])
    assert plan_lqr(m).P[0, 0] == pytest.approx(GOLDEN, abs=1e-8)
    assert plan_lqr(m, riccati_on_raw_A=True).P[0, 0] == pytest.approx(1.0, abs=1e-8)


def test_policy_call():
    assert TabularPolicy([1, 0])(0) == 1
    np.testing.assert_allclose(LQRGain(np.array([[2.0]]), None)(np.array([1.5])), [-3.0])


def test_doubling_fallback_on_barely_controllable_system():
    # |P| ~ 1e9: fixed-point sweeps alone exhaust their budget
    m = random_lqr(12, 1, 1055)
    gain = plan_lqr(m)
    ref = solve_discrete_are(m.F, m.B, m.cost_state, m.cost_action)
    assert np.linalg.norm(gain.P - ref) <= 1e-5 * np.linalg.norm(ref)
    assert spectral_radius(closed_loop(m, gain)) < 1
