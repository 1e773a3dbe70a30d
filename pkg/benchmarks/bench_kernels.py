#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins on default-layout workloads.

Usage:
    python benchmarks/bench_kernels.py [--p 0.9] [--bins 256] [--episodes 10000] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bcr import BudgetRule, build_augmented_mdp, extract_policy, make_budget_grid, min_cost_value_iteration
from bcr import kernels
from bcr._accel import HAVE_NUMBA
from bcr.gridworld import DEFAULT_LAYOUT, build_gridworld, load_layout
from bcr.solver import solve_augmented


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def workloads(p, bins, episodes):
    m = build_gridworld(load_layout(DEFAULT_LAYOUT, p), 0.95, 5.0)
    cc = min_cost_value_iteration(m)
    am = build_augmented_mdp(m, cc, make_budget_grid(m.delta_max, bins), BudgetRule.soft(m, cc))
    pol = extract_policy(am, solve_augmented(am), cc)
    idx, prob = m.successors
    S, B, A = am.action_mask.shape
    rng = np.random.default_rng(0)
    V = rng.normal(size=(S, B))
    fb = np.argmin(cc.q, axis=1)

    def backup(fn):
        Q, Vn = np.zeros((S, B, A)), np.zeros((S, B))
        return lambda: fn(V, m.reward, idx, prob, am.next_bin, am.action_mask, am.feasible_mask, fb,
                          m.gamma, Q, Vn)

    u = rng.random((episodes, 61, 2))
    offset = m.gamma * cc.v[idx] - cc.q[:, :, None]
    rargs = (np.cumsum(pol.action_dist, axis=2), idx, np.cumsum(prob, axis=2), m.reward, m.cost,
             np.cumsum(m.initial_dist), m.terminal, m.gamma, u[:, 0, 0].copy(), u[:, 1:].copy(),
             am.grid.edges, am.initial_bin.astype(np.int64), offset, am.feasible_mask, am.grid.delta_max,
             kernels.MODE_HORIZON, 5.0)

    n, nq, nv = 512, S * B * A, S * B
    sa, st = rng.integers(nq, size=n), rng.integers(nv, size=n)
    sig, nxt, done = rng.normal(size=n), rng.integers(nv, size=n), rng.random(n) < 0.05
    q, v = rng.normal(size=nq), rng.normal(size=nv)

    def sgd(td, ex):
        def run():
            for _ in range(200):
                td(q, v, sa, sig, nxt, done, 0.95, 0.1)
                ex(v, q, sa, st, 0.9, 0.1)
        return run

    return {
        f"augmented backup ({S}x{B}x{A})": (backup(kernels._nb_aug_backup), backup(kernels._np_aug_backup)),
        f"budget rollout ({episodes} x 60)": (lambda: kernels._nb_rollout_budget(*rargs),
                                              lambda: kernels._np_rollout_budget(*rargs)),
        "200 critic steps (batch 512)": (sgd(kernels._nb_td_step, kernels._nb_expectile_step),
                                         sgd(kernels._np_td_step, kernels._np_expectile_step)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, default=0.9)
    ap.add_argument("--bins", type=int, default=256)
    ap.add_argument("--episodes", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'kernel':<36}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, (nb, npy) in workloads(args.p, args.bins, args.episodes).items():
        nb()  # compile outside the timed region
        t_nb, t_np = best_of(nb, args.repeat), best_of(npy, args.repeat)
        print(f"{name:<36}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
