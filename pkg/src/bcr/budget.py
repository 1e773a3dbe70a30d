"""Budget initialization/update rules, budget grids, and the budget-augmented MDP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .cmdp import TabularCmdp
from .reachability import CostCritic

DIRECT = "direct"
SOFT = "soft"


class InfeasibleBudgetError(ValueError):
    """The threshold is below what any policy can achieve from the start distribution."""


@dataclass(frozen=True, eq=False)
class BudgetRule:
    """A pair (f, g) of initial-budget and budget-update functions.

    ``direct``: f = kappa, g = (delta - c(s,a)) / gamma.
    ``soft``:   f = V(s0) + kappa - E_mu0[V], g = V(s') + (delta - Q(s,a)) / gamma.
    """

    mode: Literal["direct", "soft"]
    cost: np.ndarray
    gamma: float
    delta_max: float
    critic: Optional[CostCritic] = None
    expected_initial_cost: float = 0.0

    def __post_init__(self):
        if self.mode not in (DIRECT, SOFT):
            raise ValueError(f"unknown budget mode {self.mode!r}")
        if self.mode == SOFT and self.critic is None:
            raise ValueError("soft budget tracking needs a cost critic")

    @classmethod
    def direct(cls, m: TabularCmdp) -> "BudgetRule":
        return cls(DIRECT, m.cost, m.gamma, m.delta_max)

    @classmethod
    def soft(cls, m: TabularCmdp, critic: CostCritic) -> "BudgetRule":
        return cls(SOFT, m.cost, m.gamma, critic.delta_max, critic,
                   float(m.initial_dist @ critic.v))

    @classmethod
    def make(cls, mode: str, m: TabularCmdp, critic: CostCritic) -> "BudgetRule":
        return cls.soft(m, critic) if mode == SOFT else cls.direct(m)

    def clamp(self, delta):
        return np.clip(delta, 0.0, self.delta_max)


def init_budget(rule: BudgetRule, s0: int, kappa: float, clamp: bool = True) -> float:
    if kappa < 0 or kappa > rule.delta_max + 1e-12:
        raise ValueError(f"kappa={kappa} outside [0, delta_max={rule.delta_max}]")
    if rule.mode == DIRECT:
        d0 = kappa
    else:
        if kappa < rule.expected_initial_cost:
            raise InfeasibleBudgetError(
                f"kappa={kappa} is below the expected minimum initial cost "
                f"{rule.expected_initial_cost:.6g}"
            )
        d0 = rule.critic.v[s0] + kappa - rule.expected_initial_cost
    return float(rule.clamp(d0)) if clamp else float(d0)


def update_budget(rule: BudgetRule, s: int, a: int, s_next: int, delta, clamp: bool = True):
    """Next budget after ``(s, a, s_next)``; vectorizes over array arguments."""
    if rule.mode == DIRECT:
        d = (delta - rule.cost[s, a]) / rule.gamma
    else:
        d = rule.critic.v[s_next] + (delta - rule.critic.q[s, a]) / rule.gamma
    return rule.clamp(d) if clamp else d


def budget_offset(rule: BudgetRule, idx: np.ndarray) -> np.ndarray:
    """Table ``k[s, a, j]`` with ``g(s, a, idx[s,a,j], delta) = (delta + k) / gamma``."""
    if rule.mode == DIRECT:
        return np.broadcast_to(-rule.cost[:, :, None], idx.shape).copy()
    return rule.gamma * rule.critic.v[idx] - rule.critic.q[:, :, None]


@dataclass(frozen=True, eq=False)
class BudgetGrid:
    """Uniform bins over [0, delta_max]; bin i is represented by its lower edge."""

    n_bins: int
    delta_max: float
    edges: np.ndarray

    @property
    def reps(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def width(self) -> float:
        return self.delta_max / self.n_bins


def make_budget_grid(delta_max: float, n_bins: int) -> BudgetGrid:
    if n_bins < 2:
        raise ValueError("need at least 2 budget bins")
    if not delta_max > 0:
        raise ValueError(f"degenerate budget range: delta_max={delta_max}")
    edges = np.linspace(0.0, delta_max, n_bins + 1)
    edges[-1] = delta_max
    return BudgetGrid(n_bins, float(delta_max), edges)


def snap_budget(grid: BudgetGrid, delta):
    """Index of the bin whose representative is the largest one <= delta.

    Out-of-range budgets clamp to the first / last bin.
    """
    b = np.searchsorted(grid.edges, delta, side="right") - 1
    b = np.clip(b, 0, grid.n_bins - 1)
    return int(b) if np.ndim(b) == 0 else b


class InfeasibleStartError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AugmentedMdp:
    """The CMDP over (state, budget-bin) pairs.

    Transitions are stored factored: from ``(s, b)`` under ``a`` the chain
    moves to ``(idx[s,a,k], next_bin[s,b,a,k])`` with probability
    ``prob[s,a,k]`` where ``idx``/``prob`` are the base successor lists.
    ``transition_matrix()`` materializes the dense table for small instances.
    """

    base: TabularCmdp
    grid: BudgetGrid
    rule: BudgetRule
    critic: CostCritic
    kappa: float
    feasible_mask: np.ndarray  # (S, B)
    action_mask: np.ndarray  # (S, B, A)
    next_bin: np.ndarray  # (S, B, A, K)
    initial_bin: np.ndarray  # (S,)
    initial_dist: np.ndarray  # (S, B)

    @property
    def n_states(self):
        return self.base.n_states

    @property
    def n_bins(self):
        return self.grid.n_bins

    @property
    def n_actions(self):
        return self.base.n_actions

    @property
    def successors(self):
        return self.base.successors

    def reward(self, s, b, a):
        return self.base.reward[s, a]

    def cost(self, s, b, a):
        return self.base.cost[s, a]

    def transition_row(self, s: int, b: int, a: int) -> np.ndarray:
        idx, prob = self.base.successors
        row = np.zeros((self.n_states, self.n_bins))
        np.add.at(row, (idx[s, a], self.next_bin[s, b, a]), prob[s, a])
        return row

    def transition_matrix(self, max_entries: int = 50_000_000) -> np.ndarray:
        S, B, A = self.n_states, self.n_bins, self.n_actions
        if (S * B) ** 2 * A > max_entries:
            raise MemoryError(f"dense augmented transition table would have {(S * B) ** 2 * A} entries")
        out = np.zeros((S, B, A, S, B))
        for s in range(S):
            for b in range(B):
                for a in range(A):
                    out[s, b, a] = self.transition_row(s, b, a)
        return out


def build_augmented_mdp(
    m: TabularCmdp, cc: CostCritic, grid: BudgetGrid, rule: BudgetRule, kappa: Optional[float] = None
) -> AugmentedMdp:
    kappa = m.cost_threshold if kappa is None else float(kappa)
    reps = grid.reps
    feasible = cc.v[:, None] <= reps[None, :]
    action_mask = cc.q[:, None, :] <= reps[None, :, None]

    idx, _ = m.successors
    S, A, K = idx.shape
    s_ = np.arange(S)[:, None, None, None]
    a_ = np.arange(A)[None, None, :, None]
    nxt = idx[:, None, :, :]
    d = update_budget(rule, s_, a_, nxt, reps[None, :, None, None])
    next_bin = snap_budget(grid, np.broadcast_to(d, (S, grid.n_bins, A, K)))

    init_bin = np.array([snap_budget(grid, init_budget(rule, s, kappa)) for s in range(S)])
    mu = np.zeros((S, grid.n_bins))
    mu[np.arange(S), init_bin] = m.initial_dist
    bad = [s for s in np.flatnonzero(m.initial_dist > 0) if not feasible[s, init_bin[s]]]
    if bad:
        raise InfeasibleStartError(
            f"start states {bad} are outside the persistent safety set at their initial budget"
        )
    return AugmentedMdp(m, grid, rule, cc, kappa, feasible, action_mask,
                        np.ascontiguousarray(next_bin, dtype=np.int64), init_bin, mu)
