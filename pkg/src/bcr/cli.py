"""``bcr`` command-line entry point.

Exit codes: 0 success, 2 when some sweep cells failed, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import io
from .budget import BudgetRule, build_augmented_mdp, make_budget_grid
from .gridworld import DEFAULT_LAYOUT, build_gridworld, coverage, generate_dataset, load_layout
from .harness import METHODS, RunConfig, emit_results, load_run_config, run_sweep
from .offline import (
    TrainConfig, bcrl_train, load_dataset, load_train_config, mc_evaluate_budget_policy, save_dataset,
)
from .reachability import min_cost_value_iteration
from .solver import evaluate_augmented, extract_policy, solve_augmented, solve_cmdp_lp

log = logging.getLogger("bcr")


def _csv_floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(","))


def _csv_ints(s: str) -> tuple:
    return tuple(int(x) for x in s.split(","))


def _read_section(path, section: str) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    return dict(cp[section]) if section in cp else {}


def _env(args):
    """Grid CMDP from --cmdp, or from --layout/--p/--gamma (config [env] fills gaps)."""
    env = _read_section(args.config, "env")
    if getattr(args, "cmdp", None):
        m = io.load_cmdp(args.cmdp)
    else:
        layout = args.layout or env.get("layout") or DEFAULT_LAYOUT
        p = args.p if args.p is not None else float(env.get("p", 1.0))
        gamma = args.gamma if args.gamma is not None else float(env.get("gamma", 0.95))
        m = build_gridworld(load_layout(layout, p), gamma)
    kappa = getattr(args, "kappa", None)
    if kappa is None and "kappa" in env:
        kappa = float(env["kappa"])
    return m if kappa is None else m.with_threshold(kappa)


def _add_env(sp, kappa=True):
    sp.add_argument("--layout", help="layout file (.grid); default: bundled 8x8 layout")
    sp.add_argument("--cmdp", help="load a CMDP JSON file instead of a layout")
    sp.add_argument("--p", type=float, help="intended-move probability")
    sp.add_argument("--gamma", type=float, help="discount factor")
    if kappa:
        sp.add_argument("--kappa", type=float, help="cost threshold")


def cmd_solve_lp(args) -> int:
    m = _env(args)
    sol = solve_cmdp_lp(m)
    print(json.dumps({"status": sol.status, "j_reward": sol.j_reward, "j_cost": sol.j_cost,
                      "kappa": m.cost_threshold}))
    if args.out:
        io.save_solution(sol, args.out)
    return 0


def cmd_solve_bamdp(args) -> int:
    m = _env(args)
    budget = _read_section(args.config, "budget")
    mode = args.mode or budget.get("mode", "soft")
    bins = args.bins or int(budget.get("bins", 64))
    cc = min_cost_value_iteration(m)
    am = build_augmented_mdp(m, cc, make_budget_grid(m.delta_max, bins), BudgetRule.make(mode, m, cc))
    pol = extract_policy(am, solve_augmented(am), cc)
    jr, jc = evaluate_augmented(am, pol.action_dist)
    print(json.dumps({"mode": mode, "bins": bins, "kappa": m.cost_threshold, "j_reward": jr, "j_cost": jc}))
    if args.out:
        io.save_policy(pol, args.out)
    return 0


def cmd_gen_dataset(args) -> int:
    m = _env(args)
    d = generate_dataset(m, args.mix, args.episodes, args.horizon, np.random.default_rng(args.seed))
    save_dataset(d, args.out)
    print(json.dumps({"records": len(d), "coverage": coverage(d, m)}))
    return 0


def _train_config(args) -> TrainConfig:
    over = {"seed": args.seed, "steps": args.steps, "n_bins": args.bins,
            "budget_mode": args.mode, "freeze_cost_after": args.freeze_cost_after}
    if args.config and "train" in _read_section_names(args.config):
        return load_train_config(args.config, **over)
    return TrainConfig(**{k: v for k, v in over.items() if v is not None})


def _read_section_names(path) -> list:
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    return cp.sections()


def cmd_train_offline(args) -> int:
    m = _env(args)
    d = load_dataset(args.dataset)
    cfg = _train_config(args)
    res = bcrl_train(d, m.gamma, m.delta_max, cfg, m.n_states, m.n_actions)
    if args.out:
        io.save_policy(res.policy, args.out)
    out = {"records": len(d), "steps": cfg.steps, "evaluation": []}
    for kappa in args.eval_kappa or ():
        r = mc_evaluate_budget_policy(m, res.policy, kappa, args.horizon, args.episodes, args.seed + 1,
                                      args.schedule, res.cost_critic, cfg.budget_mode)
        out["evaluation"].append({"kappa": kappa, **r})
    print(json.dumps(out))
    return 0


def cmd_sweep(args) -> int:
    over = {"ps": args.p, "kappas": args.kappa, "methods": args.methods, "seeds": args.seeds,
            "bins": args.bins, "horizon": args.horizon, "episodes": args.episodes,
            "layout": args.layout, "gamma": args.gamma}
    if args.config:
        cfg = load_run_config(args.config, **over)
    else:
        cfg = RunConfig(**{k: v for k, v in over.items() if v is not None})
    if args.seed is not None and args.seeds is None:
        cfg = replace(cfg, seeds=(args.seed,))
    res = run_sweep(cfg)
    emit_results(res, args.out, args.format)
    log.info("wrote %d rows to %s", len(res.rows), args.out)
    if res.n_failed:
        log.error("%d sweep cells failed", res.n_failed)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bcr", description="Budget-conditioned reachability for tabular CMDPs")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--config", help="INI file with [env]/[budget]/[train]/[sweep] sections")

    sp = sub.add_parser("solve-lp", help="exact CMDP optimum via the occupancy LP")
    _add_env(sp)
    common(sp)
    sp.add_argument("--out", help="write the solution as JSON")
    sp.set_defaults(func=cmd_solve_lp)

    sp = sub.add_parser("solve-bamdp", help="solve the budget-augmented MDP exactly")
    _add_env(sp)
    common(sp)
    sp.add_argument("--mode", choices=("direct", "soft"))
    sp.add_argument("--bins", type=int)
    sp.add_argument("--out", help="write the budget policy as JSON")
    sp.set_defaults(func=cmd_solve_bamdp)

    sp = sub.add_parser("gen-dataset", help="log transitions from a mixed behavior policy")
    _add_env(sp, kappa=False)
    common(sp)
    sp.add_argument("--mix", type=float, default=0.5, help="probability of a uniform-random action")
    sp.add_argument("--episodes", type=int, default=2000)
    sp.add_argument("--horizon", type=int, default=60)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train-offline", help="train offline BCRL on a dataset file")
    _add_env(sp, kappa=False)
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--mode", choices=("direct", "soft"))
    sp.add_argument("--freeze-cost-after", type=int, dest="freeze_cost_after")
    sp.add_argument("--eval-kappa", type=_csv_floats, help="comma-separated thresholds to evaluate")
    sp.add_argument("--horizon", type=int, default=60)
    sp.add_argument("--episodes", type=int, default=10_000)
    sp.add_argument("--schedule", choices=("horizon", "track"), default="horizon")
    sp.add_argument("--out", help="write the policy as JSON")
    sp.set_defaults(func=cmd_train_offline)

    sp = sub.add_parser("sweep", help="(method, p, kappa, seed) sweep with CSV/JSON output")
    common(sp)
    sp.add_argument("--layout")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--p", type=_csv_floats)
    sp.add_argument("--kappa", type=_csv_floats)
    sp.add_argument("--methods", type=lambda s: tuple(s.split(",")), help=f"subset of {','.join(METHODS)}")
    sp.add_argument("--seeds", type=_csv_ints)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is None and args.command != "sweep":
        args.seed = 0
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as e:
        log.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
