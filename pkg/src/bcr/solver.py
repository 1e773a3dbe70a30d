"""Exact baselines and model-based budget-conditioned planning.

* ``solve_cmdp_lp``: occupancy-measure LP, the exact CMDP optimum.
* ``solve_augmented`` / ``extract_policy``: masked value iteration on the
  budget-augmented MDP and the resulting budget policy.
* ``evaluate_policy_exact``: linear-system policy evaluation for base and
  augmented policies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels, simplex
from .budget import AugmentedMdp, BudgetGrid
from .cmdp import TabularCmdp
from .reachability import ConvergenceError, CostCritic

log = logging.getLogger(__name__)

TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CmdpSolution:
    status: Literal["optimal", "infeasible"]
    j_reward: float
    j_cost: float
    occupancy: np.ndarray
    policy: np.ndarray  # (S, A)


def occupancy_constraints(m: TabularCmdp):
    """Flow-conservation matrix ``F`` (S x SA) and rhs mu0 for ``F @ occ = mu0``."""
    S, A = m.n_states, m.n_actions
    F = np.zeros((S, S * A))
    for s in range(S):
        F[s, s * A:(s + 1) * A] += 1.0
    # - gamma * sum_{s',a'} T(s | s', a') occ(s', a')
    F -= m.gamma * m.transition.reshape(S * A, S).T
    return F, m.initial_dist.copy()


def policy_from_occupancy(occ: np.ndarray) -> np.ndarray:
    S, A = occ.shape
    tot = occ.sum(axis=1, keepdims=True)
    pol = np.full((S, A), 1.0 / A)
    visited = tot[:, 0] > 1e-14
    pol[visited] = occ[visited] / tot[visited]
    return pol


def solve_cmdp_lp(m: TabularCmdp, kappa: float | None = None) -> CmdpSolution:
    """Maximize expected discounted reward subject to the discounted-cost threshold."""
    kappa = m.cost_threshold if kappa is None else float(kappa)
    S, A = m.n_states, m.n_actions
    F, mu = occupancy_constraints(m)
    res = simplex.linprog(
        -m.reward.reshape(-1), A_eq=F, b_eq=mu,
        A_ub=m.cost.reshape(1, -1), b_ub=np.array([kappa]),
    )
    if res.status == simplex.INFEASIBLE:
        return CmdpSolution("infeasible", float("nan"), float("nan"),
                            np.zeros((S, A)), np.full((S, A), 1.0 / A))
    if res.status != simplex.OPTIMAL:
        raise simplex.SimplexError(f"occupancy LP returned {res.status}")
    occ = res.x.reshape(S, A)
    return CmdpSolution("optimal", float((occ * m.reward).sum()), float((occ * m.cost).sum()),
                        occ, policy_from_occupancy(occ))


# --------------------------------------------------------------------------
# policy evaluation
# --------------------------------------------------------------------------


def evaluate_stationary(m: TabularCmdp, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-state discounted ``(reward, cost)`` values of a stationary policy."""
    P = np.einsum("sa,sat->st", policy, m.transition)
    M = np.eye(m.n_states) - m.gamma * P
    u = np.stack([(policy * m.reward).sum(1), (policy * m.cost).sum(1)], axis=1)
    v = np.linalg.solve(M, u)
    return v[:, 0], v[:, 1]


def _augmented_chain(am: AugmentedMdp, dist: np.ndarray):
    """Sparse transition matrix over the augmented states reachable from mu0-bar."""
    S, B, A = am.n_states, am.n_bins, am.n_actions
    idx, prob = am.successors
    K = idx.shape[2]
    start = np.flatnonzero(am.initial_dist.reshape(-1) > 0)
    seen = np.zeros(S * B, dtype=bool)
    seen[start] = True
    frontier = start
    rows, cols, vals = [], [], []
    while frontier.size:
        s, b = np.divmod(frontier, B)
        w = dist[s, b][:, :, None] * prob[s][:, :, :]  # (n, A, K)
        nxt = idx[s] * B + am.next_bin[s, b]  # (n, A, K)
        keep = w > 0
        r = np.broadcast_to(frontier[:, None, None], (frontier.size, A, K))[keep]
        rows.append(r)
        cols.append(nxt[keep])
        vals.append(w[keep])
        new = np.unique(nxt[keep])
        new = new[~seen[new]]
        seen[new] = True
        frontier = new
    order = np.flatnonzero(seen)
    pos = -np.ones(S * B, dtype=np.int64)
    pos[order] = np.arange(order.size)
    rows = pos[np.concatenate(rows)]
    cols = pos[np.concatenate(cols)]
    P = sp.csr_matrix((np.concatenate(vals), (rows, cols)), shape=(order.size, order.size))
    return order, P


def evaluate_augmented(am: AugmentedMdp, dist: np.ndarray) -> tuple[float, float]:
    """Exact ``(J_R, J_C)`` of a stationary augmented policy ``dist[s, b, a]``."""
    order, P = _augmented_chain(am, dist)
    B = am.n_bins
    s, b = np.divmod(order, B)
    d = dist[s, b]
    u = np.stack([(d * am.base.reward[s]).sum(1), (d * am.base.cost[s]).sum(1)], axis=1)
    M = (sp.identity(order.size, format="csc") - am.base.gamma * P).tocsc()
    v = spla.splu(M).solve(u)
    if not np.all(np.isfinite(v)):
        raise np.linalg.LinAlgError("augmented policy evaluation produced non-finite values")
    mu = am.initial_dist.reshape(-1)[order]
    return float(mu @ v[:, 0]), float(mu @ v[:, 1])


def evaluate_policy_exact(
    model: Union[TabularCmdp, AugmentedMdp], policy, which: Literal["reward", "cost"] = "reward"
) -> float:
    """Expected discounted reward or cost from the initial distribution."""
    if which not in ("reward", "cost"):
        raise ValueError(f"which must be 'reward' or 'cost', got {which!r}")
    if isinstance(model, AugmentedMdp):
        dist = policy.action_dist if isinstance(policy, BudgetPolicy) else np.asarray(policy, float)
        jr, jc = evaluate_augmented(model, dist)
        return jr if which == "reward" else jc
    vr, vc = evaluate_stationary(model, np.asarray(policy, dtype=float))
    v = vr if which == "reward" else vc
    return float(model.initial_dist @ v)


# --------------------------------------------------------------------------
# unconstrained and min-cost references
# --------------------------------------------------------------------------


def first_best(values: np.ndarray, maximize: bool = True, mask=None, tol: float = TIE_TOL) -> np.ndarray:
    """Arg-max/min along the last axis with lowest-index tie-breaking."""
    x = values if maximize else -values
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    best = x.max(axis=-1, keepdims=True)
    return np.argmax(x >= best - tol, axis=-1)


def solve_unconstrained(m: TabularCmdp, tol: float = 1e-10, max_iters: int = 100_000):
    """Reward-maximizing value iteration; returns ``(q, deterministic policy table)``."""
    v = np.zeros(m.n_states)
    for _ in range(max_iters):
        q = m.reward + m.gamma * (m.transition @ v)
        vn = q.max(axis=1)
        resid = float(np.abs(vn - v).max())
        v = vn
        if resid <= tol:
            break
    else:
        raise ConvergenceError("unconstrained value iteration did not converge", resid)
    q = m.reward + m.gamma * (m.transition @ v)
    pol = np.eye(m.n_actions)[first_best(q)]
    return q, pol


def min_cost_policy(cc: CostCritic) -> np.ndarray:
    return np.eye(cc.q.shape[1])[first_best(cc.q, maximize=False)]


# --------------------------------------------------------------------------
# budget-augmented planning
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BudgetPolicy:
    """Action distributions over (state, budget-bin).

    Rows outside the feasible mask hold the one-hot fallback action.
    """

    action_dist: np.ndarray  # (S, B, A)
    fallback: np.ndarray  # (S,)
    feasible: np.ndarray  # (S, B)
    grid: Optional[BudgetGrid] = None

    def dist(self, s: int, b: int) -> np.ndarray:
        return self.action_dist[s, b]


def fallback_actions(cc: CostCritic) -> np.ndarray:
    return first_best(cc.q, maximize=False)


def solve_augmented(am: AugmentedMdp, tol: float = 1e-8, max_iters: int = 100_000) -> np.ndarray:
    """Q_R over ``(s, bin, a)`` for the reward-maximizing budget-restricted policy.

    The max at feasible augmented states ranges over unmasked actions only;
    infeasible states follow the min-cost fallback action.
    """
    empty = am.feasible_mask & ~am.action_mask.any(axis=2)
    assert not empty.any(), "feasible augmented state without a safe action"
    idx, prob = am.successors
    Q, V, resid, it = kernels.aug_value_iteration(
        am.base.reward, idx, prob, am.next_bin, am.action_mask, am.feasible_mask,
        fallback_actions(am.critic), am.base.gamma, tol, max_iters,
    )
    if resid > tol:
        raise ConvergenceError(f"augmented value iteration did not converge in {it} sweeps", resid)
    log.debug("augmented VI converged in %d sweeps (residual %.2e)", it, resid)
    return Q


def extract_policy(am: AugmentedMdp, q_r: np.ndarray, cc: CostCritic) -> BudgetPolicy:
    A = am.n_actions
    greedy = first_best(q_r, mask=am.action_mask)
    fb = fallback_actions(cc)
    act = np.where(am.feasible_mask, greedy, fb[:, None])
    return BudgetPolicy(np.eye(A)[act], fb, am.feasible_mask.copy(), am.grid)
