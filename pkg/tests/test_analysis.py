import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modeltransfer.analysis import (RegretOracle, best_kl_proxy, kl_model_divergence, l1_model_distance, l1_summed,
                                    optimal_values, performance_gap_bound, realisability_gap, regret_of_policy,
                                    weissman_bound, weissman_cell_bound)
from modeltransfer.envs import cartpole_lqr, random_lqr
from modeltransfer.errors import InvalidArgumentError
from modeltransfer.likelihood import count_statistics
from modeltransfer.models import LQRModel, SourceSet, TabularMDP, mix_lqr, mix_tabular
from modeltransfer.planning import LQRGain, plan_lqr, policy_evaluation, value_iteration

from conftest import random_sources, random_tabular


def one_row(r):
    # two states; only the first row varies between models
    return TabularMDP(np.array([[r], [[0.5, 0.5]]]), np.zeros((2, 1)), 0.9)


def one_state(*rows):
    return SourceSet(tuple(one_row(r) for r in rows))


def test_l1_examples(rng):
    a = random_tabular(rng, 3, 2)
    d = l1_model_distance(a, a)
    assert d.partition == 0 and d.summed == 0
    s = one_state([1.0, 0.0], [0.0, 1.0])
    assert l1_model_distance(*s.models).summed == 2.0


def test_l1_against_triple_loop(rng):
    a, b = random_tabular(rng, 4, 3), random_tabular(rng, 4, 3)
    total = 0.0
    for s in range(4):
        for act in range(3):
            for t in range(4):
                total += abs(a.transitions[s, act, t] - b.transitions[s, act, t])
    assert l1_model_distance(a, b).summed == pytest.approx(total, abs=1e-12)
    assert l1_summed(a.transitions, b.transitions) == pytest.approx(total, abs=1e-12)
    # partition form: sum over s inside the absolute value, then max over actions
    part = max(sum(abs(sum(a.transitions[s, act, t] - b.transitions[s, act, t] for s in range(4)))
                   for t in range(4)) for act in range(3))
    assert l1_model_distance(a, b).partition == pytest.approx(part, abs=1e-12)


def test_kl_examples(rng):
    a = random_tabular(rng, 3, 2)
    assert kl_model_divergence(a, a) == pytest.approx(0.0, abs=1e-14)
    s = one_state([1.0, 0.0], [0.5, 0.5])
    assert kl_model_divergence(*s.models) == pytest.approx(math.log(2), abs=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_kl_nonnegative(seed):
    r = np.random.default_rng(seed)
    assert kl_model_divergence(random_tabular(r, 3, 2), random_tabular(r, 3, 2)) >= 0


def test_kl_lqr_closed_form():
    S = np.diag([0.5, 2.0])
    a = LQRModel(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), S, np.eye(2), np.eye(1))
    b = LQRModel(np.zeros((2, 3)), S, np.eye(2), np.eye(1))
    # 0.5 * |D|^2 / 0.5 with one unit entry in the first row
    assert kl_model_divergence(a, b) == pytest.approx(1.0)
    assert kl_model_divergence(a, a) == pytest.approx(0.0, abs=1e-14)


def test_gap_examples(rng):
    src = random_sources(rng, 3, 2, 3)
    gap, w = realisability_gap(src, src.models[0])
    assert gap == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(w.w, [1, 0, 0], atol=1e-6)
    assert realisability_gap(src, mix_tabular(src, [0.5, 0.5, 0.0]))[0] == pytest.approx(0.0, abs=1e-6)
    s = one_state([0.9, 0.1], [0.1, 0.9])
    target = one_row([1.0, 0.0])
    gap, w = realisability_gap(s, target)
    grid = min(abs(1 - (0.9 * g + 0.1 * (1 - g))) + abs(0.1 * g + 0.9 * (1 - g)) for g in np.linspace(0, 1, 1001))
    assert gap == pytest.approx(grid, abs=1e-9)
    assert gap == pytest.approx(0.2, abs=1e-9)
    np.testing.assert_allclose(w.w, [1, 0], atol=1e-6)


@given(st.integers(0, 2**31 - 1))
def test_gap_zero_inside_hull(seed):
    r = np.random.default_rng(seed)
    src = random_sources(r, 3, 2, 3)
    assert realisability_gap(src, mix_tabular(src, r.dirichlet(np.ones(3))))[0] <= 1e-6


def test_gap_outside_hull_not_below_grid(rng):
    src = random_sources(rng, 2, 2, 2)
    target = random_tabular(rng, 2, 2)
    gap, _ = realisability_gap(src, target)
    grid = min(l1_summed(mix_tabular(src, [g, 1 - g]).transitions, target.transitions)
               for g in np.linspace(0, 1, 2001))
    assert gap <= grid + 1e-9
    assert gap >= grid - 1e-3


def test_gap_lqr():
    src = SourceSet((random_lqr(4, 1, 0), random_lqr(4, 1, 2)))
    assert realisability_gap(src, mix_lqr(src, [0.3, 0.7]))[0] == pytest.approx(0.0, abs=1e-6)
    shifted = LQRModel(src.models[0].mean + 0.1, src.models[0].noise_cov, np.eye(4), np.eye(1))
    gap, _ = realisability_gap(src, shifted)
    grid = min(np.linalg.norm(mix_lqr(src, [g, 1 - g]).mean - shifted.mean) for g in np.linspace(0, 1, 2001))
    assert gap == pytest.approx(grid, abs=1e-4)


def test_best_kl_proxy_beats_grid(rng):
    src = random_sources(rng, 3, 2, 2)
    target = random_tabular(rng, 3, 2)
    kl, w, proxy = best_kl_proxy(src, target)
    grid = min(kl_model_divergence(target, mix_tabular(src, [g, 1 - g])) for g in np.linspace(0, 1, 1001))
    assert kl <= grid + 1e-9
    lsrc = SourceSet((random_lqr(4, 1, 0), random_lqr(4, 1, 2)))
    ltgt = LQRModel(lsrc.models[1].mean + 0.05, lsrc.models[1].noise_cov, np.eye(4), np.eye(1))
    kl, w, proxy = best_kl_proxy(lsrc, ltgt)
    grid = min(kl_model_divergence(ltgt, mix_lqr(lsrc, [g, 1 - g])) for g in np.linspace(0, 1, 1001))
    assert kl <= grid + 1e-9


def test_performance_gap_bound_examples():
    assert performance_gap_bound(0.0, 0.0, 0.9) == 0.0
    assert performance_gap_bound(0.1, 0.0, 0.9) == pytest.approx(30.0)
    assert performance_gap_bound(0.1, 0.05, 0.5) == pytest.approx(3 * 0.15 / 0.25)
    with pytest.raises(InvalidArgumentError):
        performance_gap_bound(0.1, 0.0, 1.0)


def test_weissman_values():
    assert weissman_cell_bound(8, 2, 0.05) == pytest.approx(math.sqrt(2 * math.log(40) / 8), abs=1e-12)
    assert weissman_cell_bound(8, 2, 0.05) == pytest.approx(0.960, abs=1e-3)
    vals = [weissman_cell_bound(n, 3, 0.05) for n in (100, 10_000, 1_000_000)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert weissman_cell_bound(0, 3, 0.05) == 2.0
    assert weissman_cell_bound(5, 1, 0.05) == 0.0
    c = count_statistics([(0, 0, 1)] * 8, 2, 1)
    assert weissman_bound(c, 2, 0.05) == pytest.approx(weissman_cell_bound(8, 2, 0.05) + 2.0)
    # large S stays finite
    assert math.isfinite(weissman_cell_bound(10, 2000, 0.05))


def test_weissman_monte_carlo_coverage(rng):
    bound = weissman_cell_bound(8, 2, 0.05)
    heads = rng.binomial(8, 0.5, size=1000)
    errors = 2 * np.abs(heads / 8 - 0.5)
    assert np.mean(errors > bound) <= 0.05


def test_regret_examples(rng):
    m = random_tabular(rng, 3, 2)
    V, pol = optimal_values(m)
    assert regret_of_policy(m, pol) == pytest.approx(0.0, abs=1e-12)
    wrong = 1 - pol.action
    expected = np.max(V - policy_evaluation(m, wrong))
    assert regret_of_policy(m, wrong) == pytest.approx(expected, abs=1e-12)
    for a in np.ndindex(2, 2, 2):
        assert regret_of_policy(m, np.array(a)) >= -1e-12


def test_optimal_values_exact(rng):
    m = random_tabular(rng, 5, 3, discount=0.99)
    V, pol = optimal_values(m)
    np.testing.assert_allclose(V, policy_evaluation(m, pol), atol=1e-12)
    Vvi, _ = value_iteration(m, tol=1e-6)
    np.testing.assert_allclose(V, Vvi, atol=1e-6)


def test_lqr_regret():
    m = cartpole_lqr()
    oracle = RegretOracle(m)
    assert oracle(plan_lqr(m)) == 0.0
    K = plan_lqr(m).K
    assert oracle(1.1 * K) > 0
    unstable = LQRModel([[1.0, 0.5]], [[1.0]], [[1.0]], [[1.0]])
    zero = LQRGain(np.zeros((1, 1)), None)
    regs = [RegretOracle(unstable, horizon=h)(zero) for h in (10, 20, 40)]
    assert regs[0] < regs[1] < regs[2]
    assert RegretOracle(unstable, horizon=5000)(zero) == math.inf
    with pytest.raises(InvalidArgumentError):
        oracle(np.zeros((2, 2)))


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.3))
def test_performance_gap_bound_sound(seed, noise):
    # planning on a perturbed model loses no more than the bound on the target
    r = np.random.default_rng(seed)
    target = random_tabular(r, 4, 2, discount=0.8)
    T = (1 - noise) * target.transitions + noise * r.dirichlet(np.ones(4), size=(4, 2))
    estimate = TabularMDP(T, target.rewards, target.discount)
    _, pol = optimal_values(estimate)
    eps = l1_model_distance(target, estimate).summed
    assert regret_of_policy(target, pol) <= performance_gap_bound(eps, 0.0, 0.8) + 1e-9
