import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bcr import io
from bcr.budget import BudgetRule, build_augmented_mdp, make_budget_grid
from bcr.reachability import min_cost_value_iteration
from bcr.solver import extract_policy, solve_augmented, solve_cmdp_lp

from oracles import random_cmdp


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 3))
def test_cmdp_round_trip_is_lossless(seed, S, A):
    m = random_cmdp(np.random.default_rng(seed), S, A, 0.9)
    m2 = io.cmdp_from_dict(json.loads(json.dumps(io.cmdp_to_dict(m))))
    for f in ("transition", "reward", "cost", "initial_dist", "terminal"):
        assert np.array_equal(getattr(m, f), getattr(m2, f))
    assert (m2.gamma, m2.cost_threshold) == (m.gamma, m.cost_threshold)


def test_file_round_trips(tmp_path):
    m = random_cmdp(np.random.default_rng(1), 4, 2, 0.9)
    io.save_cmdp(m, tmp_path / "m.json")
    assert np.array_equal(io.load_cmdp(tmp_path / "m.json").transition, m.transition)

    cc = min_cost_value_iteration(m)
    io.save_critic(cc, tmp_path / "c.json")
    cc2 = io.load_critic(tmp_path / "c.json")
    assert np.array_equal(cc.q, cc2.q) and cc2.residual == cc.residual

    sol = solve_cmdp_lp(m)
    io.save_solution(sol, tmp_path / "s.json")
    sol2 = io.load_solution(tmp_path / "s.json")
    assert sol2.status == sol.status
    assert np.array_equal(sol2.policy, sol.policy)

    am = build_augmented_mdp(m.with_threshold(cc.delta_max), cc, make_budget_grid(cc.delta_max, 8),
                             BudgetRule.soft(m, cc))
    pol = extract_policy(am, solve_augmented(am), cc)
    io.save_policy(pol, tmp_path / "p.json")
    pol2 = io.load_policy(tmp_path / "p.json")
    assert np.array_equal(pol2.action_dist, pol.action_dist)
    assert np.array_equal(pol2.feasible, pol.feasible) and pol2.feasible.dtype == bool
    assert np.array_equal(pol2.grid.edges, pol.grid.edges)

    io.save_augmented(am, tmp_path / "a.json")
    d = json.loads((tmp_path / "a.json").read_text())
    assert d["kind"] == "augmented" and d["mode"] == "soft"


def test_infeasible_solution_keeps_nan(tmp_path):
    from bcr.cmdp import TabularCmdp
    m = TabularCmdp(np.ones((1, 1, 1)), [[1.0]], [[1.0]], 0.5, [1.0], 0.5)
    sol = solve_cmdp_lp(m)
    io.save_solution(sol, tmp_path / "s.json")
    # strict JSON: no bare NaN tokens
    json.loads((tmp_path / "s.json").read_text(), parse_constant=lambda c: pytest.fail(c))
    assert math.isnan(io.load_solution(tmp_path / "s.json").j_reward)


def test_kind_and_version_checked(tmp_path):
    m = random_cmdp(np.random.default_rng(1), 2, 2, 0.9)
    io.save_cmdp(m, tmp_path / "m.json")
    with pytest.raises(ValueError, match="kind"):
        io.load_critic(tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    d["format"] = 99
    (tmp_path / "m.json").write_text(json.dumps(d))
    with pytest.raises(ValueError, match="format"):
        io.load_cmdp(tmp_path / "m.json")
