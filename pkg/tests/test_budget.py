import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from bcr.budget import (
    BudgetRule, InfeasibleBudgetError, InfeasibleStartError, budget_offset, build_augmented_mdp,
    init_budget, make_budget_grid, snap_budget, update_budget,
)
from bcr.cmdp import TabularCmdp
from bcr.reachability import min_cost_value_iteration

from oracles import enumerate_deterministic_paths, one_state_example, random_cmdp

seeds = st.integers(0, 2**31 - 1)


def _setup(seed, S=5, A=3, gamma=0.9, det=False):
    m = random_cmdp(np.random.default_rng(seed), S, A, gamma, deterministic=det)
    return m, min_cost_value_iteration(m)


def test_direct_init_is_kappa():
    m = one_state_example(kappa=1.0)
    assert init_budget(BudgetRule.direct(m), 0, 1.0) == 1.0


def test_direct_update_example():
    m = one_state_example(gamma=0.5)
    rule = BudgetRule.direct(m)
    assert update_budget(rule, 0, 0, 0, 1.0) == pytest.approx(0.0)
    assert update_budget(rule, 0, 1, 0, 0.5) == pytest.approx(1.0)


def test_soft_init_on_point_mass_start_is_kappa():
    m, cc = _setup(1)
    s0 = int(np.argmax(m.initial_dist))
    kappa = cc.v[s0] + 0.5 * (cc.delta_max - cc.v[s0])
    assert init_budget(BudgetRule.soft(m, cc), s0, kappa) == pytest.approx(kappa)


def test_soft_init_mean_is_kappa():
    m, cc = _setup(2, S=4)
    mu = np.array([0.1, 0.2, 0.3, 0.4])
    m = TabularCmdp(m.transition, m.reward, m.cost, m.gamma, mu, 0.0)
    rule = BudgetRule.soft(m, cc)
    kappa = float(mu @ cc.v) + 0.1
    d0 = np.array([init_budget(rule, s, kappa, clamp=False) for s in range(4)])
    assert mu @ d0 == pytest.approx(kappa)
    assert np.all(d0 >= cc.v - 1e-12)


def test_soft_init_rejects_unreachable_threshold():
    m, cc = _setup(3)
    m = m.with_threshold(0.0)
    rule = BudgetRule.soft(m, cc)
    if rule.expected_initial_cost > 0:
        with pytest.raises(InfeasibleBudgetError):
            init_budget(rule, 0, rule.expected_initial_cost / 2)


def test_kappa_out_of_range():
    m = one_state_example()
    with pytest.raises(ValueError):
        init_budget(BudgetRule.direct(m), 0, -1.0)
    with pytest.raises(ValueError):
        init_budget(BudgetRule.direct(m), 0, m.delta_max + 1.0)


def test_unknown_mode_and_soft_without_critic():
    m = one_state_example()
    with pytest.raises(ValueError):
        BudgetRule("greedy", m.cost, m.gamma, m.delta_max)
    with pytest.raises(ValueError):
        BudgetRule("soft", m.cost, m.gamma, m.delta_max)


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 3), st.floats(0, 1))
def test_soft_step_keeps_successor_feasible(seed, S, A, frac):
    m, cc = _setup(seed, S, A)
    rule = BudgetRule.soft(m, cc)
    for s in range(S):
        delta = cc.v[s] + frac * (cc.delta_max - cc.v[s])
        for a in np.flatnonzero(cc.q[s] <= delta):
            for t in np.flatnonzero(m.transition[s, a] > 0):
                assert update_budget(rule, s, a, t, delta) >= cc.v[t] - 1e-9


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 3), st.floats(0, 1))
def test_direct_step_feasible_on_deterministic_dynamics(seed, S, A, frac):
    m, cc = _setup(seed, S, A, det=True)
    rule = BudgetRule.direct(m)
    for s in range(S):
        delta = cc.v[s] + frac * (cc.delta_max - cc.v[s])
        for a in np.flatnonzero(cc.q[s] <= delta):
            t = int(np.argmax(m.transition[s, a]))
            assert update_budget(rule, s, a, t, delta) >= cc.v[t] - 1e-9


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 3), st.floats(0, 1))
def test_soft_update_telescopes_in_expectation(seed, S, A, frac):
    m, cc = _setup(seed, S, A)
    rule = BudgetRule.soft(m, cc)
    for s in range(S):
        delta = frac * cc.delta_max
        for a in range(A):
            nxt = update_budget(rule, s, a, np.arange(S), delta, clamp=False)
            assert m.cost[s, a] + m.gamma * (m.transition[s, a] @ nxt) == pytest.approx(delta, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 5))
def test_direct_update_telescopes_along_paths(seed, depth):
    m, cc = _setup(seed, 4, 2, det=True)
    rule = BudgetRule.direct(m)
    kappa = 0.7 * m.delta_max
    s0 = int(np.argmax(m.initial_dist))
    for acts, states, costs in enumerate_deterministic_paths(m, s0, depth):
        delta = kappa
        for t, (s, a) in enumerate(zip(states, acts)):
            delta = update_budget(rule, s, a, states[t + 1], delta, clamp=False)
        spent = sum(m.gamma ** k * c for k, c in enumerate(costs))
        assert spent + m.gamma ** depth * delta == pytest.approx(kappa, abs=1e-9)


def test_offset_matches_update():
    m, cc = _setup(7)
    idx, _ = m.successors
    for rule in (BudgetRule.direct(m), BudgetRule.soft(m, cc)):
        k = budget_offset(rule, idx)
        s_ = np.arange(m.n_states)[:, None, None]
        a_ = np.arange(m.n_actions)[None, :, None]
        ref = update_budget(rule, s_, a_, idx, 0.3, clamp=False)
        assert np.allclose((0.3 + k) / m.gamma, ref)


def test_grid_examples():
    g = make_budget_grid(10.0, 4)
    assert np.allclose(g.edges, [0, 2.5, 5, 7.5, 10])
    assert np.allclose(g.reps, [0, 2.5, 5, 7.5])
    assert snap_budget(g, 0.0) == 0
    assert snap_budget(g, 2.4999) == 0
    assert snap_budget(g, 2.5) == 1
    assert snap_budget(g, 10.0) == 3
    assert snap_budget(g, 11.0) == 3
    assert snap_budget(g, -1.0) == 0
    assert list(snap_budget(g, np.array([1.0, 6.0]))) == [0, 2]


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        make_budget_grid(10.0, 1)
    with pytest.raises(ValueError):
        make_budget_grid(0.0, 8)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 50), st.integers(2, 300))
def test_snap_never_rounds_up(delta, n):
    g = make_budget_grid(20.0, n)
    b = snap_budget(g, delta)
    assert g.reps[b] <= min(delta, 20.0) + 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 3), st.sampled_from(["direct", "soft"]))
def test_augmented_structure(seed, S, A, mode):
    m, cc = _setup(seed, S, A)
    assume(cc.delta_max > 0)
    m = m.with_threshold(cc.delta_max)
    grid = make_budget_grid(cc.delta_max, 16)
    try:
        am = build_augmented_mdp(m, cc, grid, BudgetRule.make(mode, m, cc))
    except InfeasibleStartError:
        # a start whose min cost equals delta_max sits above the top bin's lower edge
        s0 = int(np.argmax(m.initial_dist))
        assert cc.v[s0] > grid.reps[-1]
        return
    # masks grow with the budget bin
    assert np.all(np.diff(am.feasible_mask.astype(int), axis=1) >= 0)
    assert np.all(np.diff(am.action_mask.astype(int), axis=1) >= 0)
    assert np.array_equal(am.feasible_mask, am.action_mask.any(axis=2))
    for s in range(S):
        for b in (0, 7, 15):
            for a in range(A):
                assert am.transition_row(s, b, a).sum() == pytest.approx(1.0)
    assert am.initial_dist.sum() == pytest.approx(1.0)


def test_dense_matrix_matches_rows():
    m, cc = _setup(11, S=3, A=2)
    am = build_augmented_mdp(m.with_threshold(cc.delta_max), cc, make_budget_grid(cc.delta_max, 4),
                             BudgetRule.soft(m, cc))
    T = am.transition_matrix()
    assert T.shape == (3, 4, 2, 3, 4)
    assert np.allclose(T.sum(axis=(3, 4)), 1.0)
    assert np.array_equal(T[1, 2, 0], am.transition_row(1, 2, 0))


def test_infeasible_start_raises():
    # start costs 1 every step with no alternative; the grid's lowest bin is 0
    m = TabularCmdp(np.ones((1, 1, 1)), [[0.0]], [[1.0]], 0.5, [1.0], 0.0)
    cc = min_cost_value_iteration(m)
    with pytest.raises(InfeasibleStartError):
        build_augmented_mdp(m, cc, make_budget_grid(m.delta_max, 8), BudgetRule.direct(m), kappa=1.0)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 3))
def test_soft_equals_direct_on_deterministic(seed, S, A):
    m, cc = _setup(seed, S, A, det=True)
    soft, direct = BudgetRule.soft(m, cc), BudgetRule.direct(m)
    nxt = m.transition.argmax(axis=2)
    for delta in np.linspace(0, cc.delta_max, 11):
        for s in range(S):
            for a in range(A):
                t = nxt[s, a]
                d1 = update_budget(soft, s, a, t, delta, clamp=False)
                d2 = update_budget(direct, s, a, t, delta, clamp=False)
                assert abs(d1 - d2) <= 1e-9


def _two_start_example():
    # state 0 pays at least 0.2 per step forever, state 1 at least 0.4; both self-loop
    T = np.zeros((2, 2, 2))
    T[0, :, 0] = T[1, :, 1] = 1.0
    m = TabularCmdp(T, np.zeros((2, 2)), [[0.2, 1.0], [0.4, 1.0]], 0.9, [0.5, 0.5], 5.0)
    return m, min_cost_value_iteration(m)


def test_soft_init_two_starts():
    m, cc = _two_start_example()
    assert cc.v == pytest.approx([2.0, 4.0])
    rule = BudgetRule.soft(m, cc)
    assert rule.expected_initial_cost == pytest.approx(3.0)
    assert init_budget(rule, 0, 5.0) == pytest.approx(4.0)
    assert init_budget(rule, 1, 5.0) == pytest.approx(6.0)


def test_update_arithmetic_examples():
    m = TabularCmdp(np.ones((1, 1, 1)), [[0.0]], [[1.0]], 0.9, [1.0], 0.0)
    assert update_budget(BudgetRule.direct(m), 0, 0, 0, 5.0) == pytest.approx(4 / 0.9)
    cc = min_cost_value_iteration(m)
    fake = type(cc)(np.array([1.0]), np.array([[2.0]]), cc.delta_max, 0.9)
    rule = BudgetRule("soft", m.cost, 0.9, cc.delta_max, fake, 1.0)
    assert update_budget(rule, 0, 0, 0, 5.0) == pytest.approx(1 + 3 / 0.9)


def test_grid_spec_examples():
    g = make_budget_grid(10.0, 2)
    assert list(g.edges) == [0.0, 5.0, 10.0]
    assert snap_budget(g, 5.0) == 1
    g = make_budget_grid(20.0, 100)
    assert len(g.edges) == 101
    assert np.allclose(np.diff(g.edges), 0.2)
    assert np.all(np.diff(g.edges) > 0)


def test_zero_budget_bin_infeasible_when_cost_unavoidable():
    m, cc = _two_start_example()
    am = build_augmented_mdp(m, cc, make_budget_grid(cc.delta_max, 8), BudgetRule.soft(m, cc))
    assert not am.feasible_mask[:, 0].any()
    assert am.n_states * am.n_bins == 16
    assert am.feasible_mask[:, -1].all()


def test_deterministic_base_gives_deterministic_augmented_chain():
    m, cc = _setup(13, S=4, A=2, det=True)
    m = m.with_threshold(cc.delta_max)
    am = build_augmented_mdp(m, cc, make_budget_grid(cc.delta_max, 8), BudgetRule.direct(m))
    for s in range(4):
        for b in range(8):
            for a in range(2):
                assert np.count_nonzero(am.transition_row(s, b, a)) == 1


def test_small_instance_structure():
    m, cc = _setup(17, S=2, A=2)
    m = m.with_threshold(cc.delta_max)
    am = build_augmented_mdp(m, cc, make_budget_grid(cc.delta_max, 4), BudgetRule.soft(m, cc))
    T = am.transition_matrix()
    assert T.reshape(8, 2, 8).shape[0] <= 8
    assert np.allclose(T.sum(axis=(3, 4)), 1.0, atol=1e-9)
    # rewards and costs delegate to the base tables
    assert am.reward(1, 3, 0) == m.reward[1, 0]
    assert am.cost(0, 2, 1) == m.cost[0, 1]
