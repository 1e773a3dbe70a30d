"""Optimal cost critics and budget-conditioned persistent safety sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import TabularCmdp


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True, eq=False)
class CostCritic:
    """Tables of V_C* and Q_C* (minimum expected discounted future cost)."""

    v: np.ndarray
    q: np.ndarray
    delta_max: float
    gamma: float
    residual: float = 0.0

    @property
    def n_states(self):
        return self.q.shape[0]


def min_cost_value_iteration(m: TabularCmdp, tol: float = 1e-10, max_iters: int = 100_000) -> CostCritic:
    """Fixed point of ``Q(s,a) = c(s,a) + gamma * sum_s' T(s'|s,a) min_a' Q(s',a')``.

    Jacobi sweeps from ``v = 0``; since costs are non-negative the iterates
    increase monotonically toward V_C*.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    T, c, g = m.transition, m.cost, m.gamma
    v = np.zeros(m.n_states)
    resid = np.inf
    for _ in range(max_iters):
        q = c + g * (T @ v)
        vn = q.min(axis=1)
        resid = float(np.abs(vn - v).max()) if v.size else 0.0
        v = vn
        if resid <= tol:
            break
    else:
        raise ConvergenceError(f"min-cost value iteration did not converge in {max_iters} sweeps", resid)
    q = c + g * (T @ v)
    dmax = m.delta_max
    # rounding can push a hair past the analytic bounds
    q = np.clip(q, 0.0, dmax)
    v = np.clip(q.min(axis=1), 0.0, dmax)
    return CostCritic(v=v, q=q, delta_max=dmax, gamma=g, residual=resid)


def _check_delta(delta):
    if delta < 0:
        raise ValueError(f"budget must be non-negative, got {delta}")


def is_state_feasible(cc: CostCritic, s: int, delta: float) -> bool:
    _check_delta(delta)
    return bool(cc.v[s] <= delta)


def safe_action_set(cc: CostCritic, s: int, delta: float) -> set[int]:
    _check_delta(delta)
    return {int(a) for a in np.flatnonzero(cc.q[s] <= delta)}


def feasible_states(cc: CostCritic, delta: float) -> np.ndarray:
    """Boolean mask of S_P(delta)."""
    _check_delta(delta)
    return cc.v <= delta
