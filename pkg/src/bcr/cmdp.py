"""Tabular constrained MDPs, validation, and seeded sampling primitives."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels

SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TabularCmdp:
    """Finite CMDP stored as dense tables.

    ``transition[s, a, s']`` is T(s'|s,a); ``reward`` and ``cost`` are indexed
    ``(s, a)``. ``terminal`` optionally flags absorbing zero-reward zero-cost
    states at which rollouts may stop early.
    """

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    cost_threshold: float
    terminal: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=float))
        object.__setattr__(self, "initial_dist", np.asarray(self.initial_dist, dtype=float))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "cost_threshold", float(self.cost_threshold))
        if self.terminal is None:
            term = np.zeros(self.transition.shape[0], dtype=bool)
        else:
            term = np.asarray(self.terminal, dtype=bool)
        object.__setattr__(self, "terminal", term)
        for arr in (self.transition, self.reward, self.cost, self.initial_dist, self.terminal):
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def c_max(self) -> float:
        return float(self.cost.max()) if self.cost.size else 0.0

    @property
    def delta_max(self) -> float:
        return self.c_max / (1.0 - self.gamma)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.transition == 0.0) | (self.transition == 1.0)))

    @cached_property
    def successors(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded sparse successor lists ``(idx[s,a,k], prob[s,a,k])``.

        Padding entries have probability 0 and index 0.
        """
        nz = self.transition > 0.0
        k = max(int(nz.sum(axis=2).max()), 1)
        idx = np.zeros((self.n_states, self.n_actions, k), dtype=np.int64)
        prob = np.zeros((self.n_states, self.n_actions, k))
        for s in range(self.n_states):
            for a in range(self.n_actions):
                nxt = np.flatnonzero(nz[s, a])
                idx[s, a, : nxt.size] = nxt
                prob[s, a, : nxt.size] = self.transition[s, a, nxt]
        return idx, prob

    def with_threshold(self, kappa: float) -> "TabularCmdp":
        return TabularCmdp(
            self.transition, self.reward, self.cost, self.gamma,
            self.initial_dist, kappa, self.terminal, self.name,
        )


@dataclass
class ValidationReport:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "pass" if self.ok else "fail: " + "; ".join(self.problems)


def validate_cmdp(m: TabularCmdp) -> ValidationReport:
    rep = ValidationReport()
    T = m.transition
    if T.ndim != 3 or T.shape[0] != T.shape[2]:
        rep.problems.append(f"transition must have shape (S, A, S), got {T.shape}")
        return rep
    S, A = T.shape[:2]
    if m.reward.shape != (S, A):
        rep.problems.append(f"reward shape {m.reward.shape} != {(S, A)}")
    if m.cost.shape != (S, A):
        rep.problems.append(f"cost shape {m.cost.shape} != {(S, A)}")
    if m.initial_dist.shape != (S,):
        rep.problems.append(f"initial_dist shape {m.initial_dist.shape} != {(S,)}")
    if m.terminal.shape != (S,):
        rep.problems.append(f"terminal shape {m.terminal.shape} != {(S,)}")
    if rep.problems:
        return rep

    if np.any(T < 0):
        for s, a, sp in np.argwhere(T < 0):
            rep.problems.append(f"negative probability T({s},{a},{sp})")
    sums = T.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > SUM_TOL):
        rep.problems.append(f"row T({s},{a},.) sums to {sums[s, a]:.12g}")
    if not np.all(np.isfinite(m.reward)):
        rep.problems.append("reward has non-finite entries")
    for s, a in np.argwhere(~(m.cost >= 0)):
        rep.problems.append(f"cost({s},{a}) = {m.cost[s, a]} is negative")
    if not (0.0 <= m.gamma < 1.0):
        rep.problems.append(f"gamma = {m.gamma} outside [0, 1): discount out of range")
    mu = m.initial_dist
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > SUM_TOL:
        rep.problems.append(f"initial_dist sums to {mu.sum():.12g} or has negative entries")
    if 0.0 <= m.gamma < 1.0 and np.all(m.cost >= 0):
        dmax = m.delta_max
        if not (0.0 <= m.cost_threshold <= dmax + 1e-12):
            rep.problems.append(f"cost_threshold {m.cost_threshold} outside [0, delta_max={dmax}]")
    for s in np.flatnonzero(m.terminal):
        if not (np.all(T[s, :, s] == 1.0) and np.all(m.reward[s] == 0) and np.all(m.cost[s] == 0)):
            rep.problems.append(f"terminal state {s} is not a zero-reward zero-cost self-loop")
    return rep


def _check_sa(m: TabularCmdp, s: int, a: int):
    if not (0 <= s < m.n_states):
        raise IndexError(f"state {s} out of range [0, {m.n_states})")
    if not (0 <= a < m.n_actions):
        raise IndexError(f"action {a} out of range [0, {m.n_actions})")


def _draw(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if i >= probs.size:
        i = int(np.flatnonzero(probs)[-1])
    return i


def sample_next(m: TabularCmdp, s: int, a: int, rng: np.random.Generator) -> int:
    _check_sa(m, s, a)
    return _draw(m.transition[s, a], rng.random())


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # of (s, a, r, c, s_next)
    discounted_cost: float
    discounted_reward: float
    gamma: float

    def __len__(self):
        return len(self.steps)

    def recompute(self) -> tuple[float, float]:
        """Recompute ``(discounted_reward, discounted_cost)`` from the steps."""
        jr = jc = 0.0
        g = 1.0
        for _, _, r, c, _ in self.steps:
            jr += g * r
            jc += g * c
            g *= self.gamma
        return jr, jc


def check_distribution(p, n_actions: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (n_actions,) or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"invalid action distribution {p!r}")
    return p


def rollout(
    m: TabularCmdp,
    policy: Callable[[int, int], Sequence[float]],
    horizon: int,
    rng: np.random.Generator,
    s0: Optional[int] = None,
) -> Trajectory:
    """Sample one episode of at most ``horizon`` steps.

    ``policy(s, t)`` returns a distribution over actions. The episode stops
    early once a state flagged ``terminal`` is reached.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = _draw(m.initial_dist, rng.random()) if s0 is None else int(s0)
    steps = []
    jr = jc = 0.0
    g = 1.0
    for t in range(horizon):
        if m.terminal[s]:
            break
        p = check_distribution(policy(s, t), m.n_actions)
        a = _draw(p, rng.random())
        sp = _draw(m.transition[s, a], rng.random())
        r, c = float(m.reward[s, a]), float(m.cost[s, a])
        steps.append((s, a, r, c, sp))
        jr += g * r
        jc += g * c
        g *= m.gamma
        s = sp
    return Trajectory(tuple(steps), jc, jr, m.gamma)


def stationary_policy(table: np.ndarray) -> Callable[[int, int], np.ndarray]:
    table = np.asarray(table, dtype=float)
    return lambda s, t: table[s]


def mc_evaluate(
    m: TabularCmdp, policy_table: np.ndarray, horizon: int, n_episodes: int, seed: int
) -> dict:
    """Monte-Carlo estimate of J_R and J_C for a stationary tabular policy.

    Runs the batched rollout kernel; returns means and standard errors.
    """
    rng = np.random.default_rng(seed)
    u = rng.random((n_episodes, horizon + 1, 2))
    idx, prob = m.successors
    jr, jc = kernels.rollout_stationary(
        np.cumsum(np.asarray(policy_table, dtype=float), axis=1),
        idx, np.cumsum(prob, axis=2), m.reward, m.cost,
        np.cumsum(m.initial_dist), m.terminal, m.gamma, u,
    )
    return _summary(jr, jc)


def _summary(jr: np.ndarray, jc: np.ndarray) -> dict:
    n = jr.size
    se = (lambda x: float(x.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0)
    return {
        "j_reward": float(jr.mean()), "j_reward_se": se(jr),
        "j_cost": float(jc.mean()), "j_cost_se": se(jc),
        "n": n,
    }
