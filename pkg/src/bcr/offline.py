"""Offline budget-conditioned RL at tabular scale.

Critics are tables trained by per-entry SGD on minibatches drawn from a
logged dataset: an expectile/TD pair for the cost critic, and an
expectile/TD pair over (state, budget-bin) for the reward critic fed by
budget-augmented samples. The policy is the closed-form AWR optimum.
"""

from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from . import kernels
from .budget import DIRECT, SOFT, BudgetGrid, make_budget_grid, snap_budget
from .cmdp import TabularCmdp, Trajectory, _summary
from .solver import BudgetPolicy, first_best

log = logging.getLogger(__name__)

DATASET_HEADER = ("s", "a", "r", "c", "s_next", "done")


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray
    done: np.ndarray

    @classmethod
    def from_records(cls, records) -> "TransitionDataset":
        recs = list(records)
        if not recs:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z, np.zeros(0), np.zeros(0), z, np.zeros(0, dtype=bool))
        s, a, r, c, sp, d = zip(*recs)
        return cls(np.asarray(s, np.int64), np.asarray(a, np.int64), np.asarray(r, float),
                   np.asarray(c, float), np.asarray(sp, np.int64), np.asarray(d, bool))

    def __len__(self):
        return self.s.size

    def records(self):
        for i in range(len(self)):
            yield (int(self.s[i]), int(self.a[i]), float(self.r[i]), float(self.c[i]),
                   int(self.s_next[i]), bool(self.done[i]))

    def validate(self, n_states: int, n_actions: int) -> None:
        if len(self) and (self.s.max() >= n_states or self.s_next.max() >= n_states
                          or self.a.max() >= n_actions or self.s.min() < 0 or self.a.min() < 0):
            raise ValueError("dataset indices out of range")
        if np.any(self.c < 0):
            raise ValueError("dataset contains negative costs")

    def counts(self, n_states: int, n_actions: int) -> np.ndarray:
        n = np.zeros((n_states, n_actions))
        np.add.at(n, (self.s, self.a), 1.0)
        return n


def save_dataset(d: TransitionDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for s, a, r, c, sp, done in d.records():
            w.writerow([s, a, repr(r), repr(c), sp, int(done)])


def load_dataset(path) -> TransitionDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(x.strip() for x in rows[0]) != DATASET_HEADER:
        raise ValueError(f"{path}: missing header row {','.join(DATASET_HEADER)}")
    recs = []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 6:
            raise ValueError(f"{path}:{i}: expected 6 fields, got {len(row)}")
        done = row[5].strip().lower() in ("1", "true", "yes")
        recs.append((int(row[0]), int(row[1]), float(row[2]), float(row[3]), int(row[4]), done))
    return TransitionDataset.from_records(recs)


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    tau_cost: float = 0.05
    tau_reward: float = 0.9
    beta: float = 0.1
    alpha: float = 0.05
    lr: float = 0.1
    steps: int = 100_000
    batch: int = 512
    seed: int = 0
    n_bins: int = 64
    budget_mode: Literal["direct", "soft"] = SOFT
    # per-loss overrides; None falls back to lr
    lr_q_cost: Optional[float] = None
    lr_v_cost: Optional[float] = None
    lr_q_reward: Optional[float] = None
    lr_v_reward: Optional[float] = None
    freeze_cost_after: Optional[int] = None
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        if not (0.0 < self.tau_cost <= 0.5):
            raise ValueError("tau_cost must lie in (0, 0.5]")
        if not (0.5 <= self.tau_reward < 1.0):
            raise ValueError("tau_reward must lie in [0.5, 1)")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.steps < 0 or self.batch < 1 or self.n_bins < 2:
            raise ValueError("steps >= 0, batch >= 1 and n_bins >= 2 required")
        if self.budget_mode not in (DIRECT, SOFT):
            raise ValueError(f"budget_mode must be direct or soft, got {self.budget_mode!r}")

    def rate(self, which: str) -> float:
        v = getattr(self, f"lr_{which}")
        return self.lr if v is None else v


def load_train_config(path, **overrides) -> TrainConfig:
    """Read the ``[train]`` section of an INI-style config file."""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    if "train" not in cp:
        raise ValueError(f"{path}: no [train] section")
    kw = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    for key, raw in cp["train"].items():
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"{path}: unknown train option {key!r}")
        kw[key] = _coerce(raw, types[key])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


def _coerce(raw: str, typ) -> object:
    raw = raw.strip()
    t = str(typ)
    if raw.lower() in ("none", "") and "Optional" in t:
        return None
    if "int" in t and "float" not in t:
        return int(raw)
    if "float" in t:
        return float(raw)
    return raw


# --------------------------------------------------------------------------
# expectiles
# --------------------------------------------------------------------------


def expectile_loss_grad(u, tau: float):
    """``(|tau - 1{u<0}| u^2, d/du)``; works elementwise on arrays."""
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie in (0, 1)")
    w = np.where(np.asarray(u) < 0, 1.0 - tau, tau)
    loss = w * np.square(u)
    grad = 2.0 * w * np.asarray(u)
    if np.ndim(u) == 0:
        return float(loss), float(grad)
    return loss, grad


def expectile(x, tau: float, weights=None) -> float:
    """Exact tau-expectile of a (weighted) sample."""
    x = np.asarray(x, dtype=float)
    wts = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    e = float(np.average(x, weights=wts))
    for _ in range(200):
        w = wts * np.where(x < e, 1.0 - tau, tau)
        en = float((w * x).sum() / w.sum())
        if en == e:
            break
        e = en
    return e


# --------------------------------------------------------------------------
# critics
# --------------------------------------------------------------------------


@dataclass(eq=False)
class LearnedCritic:
    """Tabular critic. Cost kind: q (S, A), v (S). Reward kind: q (S, B, A), v (S, B)."""

    q: np.ndarray
    v: np.ndarray
    q_target: np.ndarray
    kind: Literal["cost", "reward"]
    gamma: float
    delta_max: float
    counts: np.ndarray = field(default=None)

    def copy(self) -> "LearnedCritic":
        return replace(self, q=self.q.copy(), v=self.v.copy(), q_target=self.q_target.copy())


def init_cost_critic(n_states, n_actions, gamma, delta_max) -> LearnedCritic:
    # unseen entries stay at the pessimistic value
    q = np.full((n_states, n_actions), float(delta_max))
    return LearnedCritic(q, np.full(n_states, float(delta_max)), q.copy(), "cost", gamma, delta_max)


def init_reward_critic(n_states, n_bins, n_actions, gamma, delta_max) -> LearnedCritic:
    q = np.zeros((n_states, n_bins, n_actions))
    return LearnedCritic(q, np.zeros((n_states, n_bins)), q.copy(), "reward", gamma, delta_max)


def _shape_of(d: TransitionDataset, n_states=None, n_actions=None):
    S = n_states if n_states is not None else int(max(d.s.max(), d.s_next.max())) + 1
    A = n_actions if n_actions is not None else int(d.a.max()) + 1
    return S, A


def _check_dataset(d: TransitionDataset):
    if len(d) == 0:
        raise ValueError("cannot train on an empty dataset")


def _cost_step(cc: LearnedCritic, d: TransitionDataset, batch: np.ndarray, cfg: TrainConfig):
    S, A = cc.q.shape
    s, a, sp = d.s[batch], d.a[batch], d.s_next[batch]
    sa = s * A + a
    q = cc.q.reshape(-1)
    qt = cc.q_target.reshape(-1)
    kernels.td_step(q, cc.v, sa, d.c[batch], sp, d.done[batch], cc.gamma, cfg.rate("q_cost"))
    kernels.expectile_step(cc.v, qt, sa, s, cfg.tau_cost, cfg.rate("v_cost"))
    np.clip(cc.q, 0.0, cc.delta_max, out=cc.q)
    np.clip(cc.v, 0.0, cc.delta_max, out=cc.v)
    cc.q_target *= 1.0 - cfg.alpha
    cc.q_target += cfg.alpha * cc.q


def fit_cost_critic(d: TransitionDataset, cfg: TrainConfig, rng: np.random.Generator,
                    gamma: float, delta_max: float, n_states=None, n_actions=None) -> LearnedCritic:
    """Expectile (tau_cost <= 0.5) value fit plus TD Q fit of the discounted cost."""
    _check_dataset(d)
    S, A = _shape_of(d, n_states, n_actions)
    d.validate(S, A)
    cc = init_cost_critic(S, A, gamma, delta_max)
    cc.counts = d.counts(S, A)
    for _ in range(cfg.steps):
        _cost_step(cc, d, rng.integers(len(d), size=cfg.batch), cfg)
    unseen = int((cc.counts == 0).sum())
    if unseen:
        log.info("cost critic: %d state-action pairs absent from data keep value delta_max", unseen)
    return cc


@dataclass(frozen=True, eq=False)
class AugmentedBatch:
    s: np.ndarray
    b: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray
    s_next: np.ndarray
    b_next: np.ndarray
    done: np.ndarray
    delta: np.ndarray
    delta_next: np.ndarray  # before clamping


def augment_batch(d: TransitionDataset, critic, mode: str, grid: BudgetGrid, batch, rng: np.random.Generator,
                  gamma: float, u=None) -> AugmentedBatch:
    """Attach sampled budgets to logged transitions.

    ``batch`` is a size or an index array into ``d``. For each record the
    budget is uniform on ``[Q_C(s,a), delta_max]`` (``u`` overrides the
    uniform draws) and the next budget follows the ``mode`` update rule.
    ``critic`` is any object with ``q`` and ``v`` tables.
    """
    mode = getattr(mode, "mode", mode)
    idx = rng.integers(len(d), size=batch) if np.ndim(batch) == 0 else np.asarray(batch)
    s, a, sp, c = d.s[idx], d.a[idx], d.s_next[idx], d.c[idx]
    lo = np.minimum(critic.q[s, a], grid.delta_max)
    if u is None:
        u = rng.random(idx.size)
    delta = lo + u * (grid.delta_max - lo)
    if mode == DIRECT:
        dn = (delta - c) / gamma
    else:
        dn = critic.v[sp] + (delta - critic.q[s, a]) / gamma
    return AugmentedBatch(
        s, snap_budget(grid, delta), a, d.r[idx], c, sp,
        snap_budget(grid, np.clip(dn, 0.0, grid.delta_max)), d.done[idx], delta, dn,
    )


def _reward_step(rc: LearnedCritic, ab: AugmentedBatch, cfg: TrainConfig):
    S, B, A = rc.q.shape
    sb = ab.s * B + ab.b
    sba = sb * A + ab.a
    nxt = ab.s_next * B + ab.b_next
    q = rc.q.reshape(-1)
    v = rc.v.reshape(-1)
    kernels.td_step(q, v, sba, ab.r, nxt, ab.done, rc.gamma, cfg.rate("q_reward"))
    kernels.expectile_step(v, rc.q_target.reshape(-1), sba, sb, cfg.tau_reward, cfg.rate("v_reward"))
    rc.q_target *= 1.0 - cfg.alpha
    rc.q_target += cfg.alpha * rc.q


def fit_reward_critic(d: TransitionDataset, cost_critic, grid: BudgetGrid, cfg: TrainConfig,
                      rng: np.random.Generator, gamma: float) -> LearnedCritic:
    """Reward critic over (state, budget-bin) trained on augmented samples of ``d``."""
    _check_dataset(d)
    S, A = cost_critic.q.shape
    d.validate(S, A)
    rc = init_reward_critic(S, grid.n_bins, A, gamma, grid.delta_max)
    rc.counts = d.counts(S, A)
    for _ in range(cfg.steps):
        ab = augment_batch(d, cost_critic, cfg.budget_mode, grid, cfg.batch, rng, gamma)
        _reward_step(rc, ab, cfg)
    return rc


def extract_awr_policy(reward_critic: LearnedCritic, cost_critic, grid: BudgetGrid,
                       cfg: TrainConfig) -> BudgetPolicy:
    """Closed-form AWR optimum over the tabular softmax class.

    ``pi(a | s, b)`` is proportional to ``n(s, a) exp(A(s, b, a) / beta)`` on
    dataset-supported actions, restricted to ``{a : Q_C(s, a) <= rep(b)}``.
    Where that set is empty the row copies the lowest bin at which it is
    not: reward entries below that bin never receive augmented samples, so
    their advantages are meaningless. States absent from the data use the
    learned min-cost action.
    """
    qr, vr = reward_critic.q, reward_critic.v
    S, B, A = qr.shape
    n = reward_critic.counts
    if n is None:
        n = np.ones((S, A))
    tol = cfg.feasibility_tol
    fb = first_best(cost_critic.q, maximize=False)
    support = n > 0
    visited = support.any(axis=1)
    allowed = support[:, None, :] & (cost_critic.q[:, None, :] <= grid.reps[None, :, None] + tol)
    feas = (cost_critic.v[:, None] <= grid.reps[None, :] + tol) & visited[:, None]
    has = allowed.any(axis=2)
    empty = visited[:, None] & ~has
    if empty.any():
        log.info("learned safe action set empty at %d visited (state, bin) pairs; "
                 "lifting them to the lowest non-empty bin", int(empty.sum()))
    adv = np.where(allowed, (qr - vr[:, :, None]) / cfg.beta, -np.inf)
    top = adv.max(axis=2, keepdims=True)
    w = np.where(allowed, n[:, None, :] * np.exp(adv - np.where(has[:, :, None], top, 0.0)), 0.0)
    tot = w.sum(axis=2, keepdims=True)
    dist = w / np.where(tot > 0, tot, 1.0)
    for s in np.flatnonzero(visited & ~has.all(axis=1)):
        if has[s].any():
            first = int(np.argmax(has[s]))
            dist[s, :first] = dist[s, first]
    # unvisited, or no representative reaches any learned Q_C (e.g. untrained critic)
    blind = ~has.any(axis=1)
    dist[blind] = np.eye(A)[fb[blind]][:, None, :]
    return BudgetPolicy(dist, fb, feas, grid)


@dataclass(eq=False)
class TrainResult:
    policy: BudgetPolicy
    cost_critic: LearnedCritic
    reward_critic: LearnedCritic
    grid: BudgetGrid


def bcrl_train(d: TransitionDataset, gamma: float, delta_max: float, cfg: TrainConfig,
               n_states=None, n_actions=None) -> TrainResult:
    """Interleaved training loop: per step, cost critic, budget sampling, reward critic.

    The policy is extracted from the final critics.
    """
    _check_dataset(d)
    S, A = _shape_of(d, n_states, n_actions)
    d.validate(S, A)
    rng = np.random.default_rng(cfg.seed)
    grid = make_budget_grid(delta_max, cfg.n_bins)
    cc = init_cost_critic(S, A, gamma, delta_max)
    rc = init_reward_critic(S, grid.n_bins, A, gamma, delta_max)
    cc.counts = rc.counts = d.counts(S, A)
    for step in range(cfg.steps):
        batch = rng.integers(len(d), size=cfg.batch)
        if cfg.freeze_cost_after is None or step < cfg.freeze_cost_after:
            _cost_step(cc, d, batch, cfg)
        ab = augment_batch(d, cc, cfg.budget_mode, grid, batch, rng, gamma)
        _reward_step(rc, ab, cfg)
    policy = extract_awr_policy(rc, cc, grid, cfg)
    return TrainResult(policy, cc, rc, grid)


# --------------------------------------------------------------------------
# finite-horizon execution
# --------------------------------------------------------------------------


def eval_budget_schedule(kappa: float, cost_so_far: float, gamma: float, H: int, t: int,
                         delta_max: float = np.inf) -> float:
    """Budget handed to the policy at step ``t`` of an ``H``-step episode.

    The remaining threshold is spread evenly over the remaining steps and
    converted to a discounted sum.
    """
    if not (0 <= t < H):
        raise ValueError(f"need 0 <= t < H, got t={t}, H={H}")
    rem = max(kappa - cost_so_far, 0.0)
    left = H - t
    # the last step collapses to the remaining threshold; skip the rounding
    d = rem if left == 1 else rem / (1.0 - gamma) * (1.0 - gamma ** left) / left
    return float(min(max(d, 0.0), delta_max))


def run_episode_with_budget(env: TabularCmdp, policy: BudgetPolicy, kappa: float, H: int,
                            rng: np.random.Generator) -> Trajectory:
    """One episode; the budget is recomputed from the schedule before every action."""
    from .cmdp import _draw

    grid = policy.grid
    s = _draw(env.initial_dist, rng.random())
    spent = 0.0
    steps = []
    jr = jc = 0.0
    g = 1.0
    for t in range(H):
        if env.terminal[s]:
            break
        delta = eval_budget_schedule(kappa, spent, env.gamma, H, t, grid.delta_max)
        b = snap_budget(grid, delta)
        a = _draw(policy.action_dist[s, b], rng.random())
        sp = _draw(env.transition[s, a], rng.random())
        r, c = float(env.reward[s, a]), float(env.cost[s, a])
        steps.append((s, a, r, c, sp))
        jr += g * r
        jc += g * c
        g *= env.gamma
        spent += c
        s = sp
    return Trajectory(tuple(steps), jc, jr, env.gamma)


def mc_evaluate_budget_policy(env: TabularCmdp, policy: BudgetPolicy, kappa: float, H: int,
                              n_episodes: int, seed: int, schedule: str = "horizon",
                              critic=None, mode: str = SOFT) -> dict:
    """Monte-Carlo ``J_R``/``J_C`` of a budget policy.

    ``schedule="horizon"`` recomputes the budget each step from the
    finite-horizon schedule. ``schedule="track"`` initializes and updates the
    budget with the ``mode`` rule driven by ``critic`` (any object with ``q``
    and ``v``), exactly as in the augmented chain.
    """
    grid = policy.grid
    idx, prob = env.successors
    rng = np.random.default_rng(seed)
    u = rng.random((n_episodes, H + 1, 2))
    if schedule == "track":
        if critic is None:
            raise ValueError("budget tracking needs a critic")
        if mode == DIRECT:
            offset = np.broadcast_to(-env.cost[:, :, None], idx.shape).copy()
            d0 = np.full(env.n_states, kappa)
        else:
            offset = env.gamma * critic.v[idx] - critic.q[:, :, None]
            d0 = critic.v + kappa - env.initial_dist @ critic.v
        b0 = snap_budget(grid, np.clip(d0, 0.0, grid.delta_max))
        b0 = np.atleast_1d(b0).astype(np.int64)
        mode_id = kernels.MODE_TRACK
    elif schedule == "horizon":
        offset = np.zeros(idx.shape)
        b0 = np.zeros(env.n_states, dtype=np.int64)
        mode_id = kernels.MODE_HORIZON
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    jr, jc, bad = kernels.rollout_budget(
        np.cumsum(policy.action_dist, axis=2), idx, np.cumsum(prob, axis=2),
        env.reward, env.cost, np.cumsum(env.initial_dist), env.terminal, env.gamma, u,
        grid.edges, b0, np.ascontiguousarray(offset), policy.feasible, grid.delta_max, mode_id, kappa,
    )
    out = _summary(jr, jc)
    out["infeasible_visits"] = int(bad.sum())
    return out
