"""Grid-world sweep over (method, p, kappa, seed) with normalized metrics."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .budget import (
    DIRECT, SOFT, BudgetRule, InfeasibleBudgetError, InfeasibleStartError, build_augmented_mdp,
    make_budget_grid,
)
from .cmdp import TabularCmdp
from .gridworld import DEFAULT_LAYOUT, build_gridworld, generate_dataset, load_layout
from .offline import TrainConfig, bcrl_train, mc_evaluate_budget_policy
from .reachability import CostCritic, min_cost_value_iteration
from .solver import (
    evaluate_augmented, evaluate_policy_exact, extract_policy, min_cost_policy, solve_augmented,
    solve_cmdp_lp, solve_unconstrained,
)

log = logging.getLogger(__name__)

METHODS = ("lp", "bamdp-direct", "bamdp-soft", "offline-bcrl", "unconstrained")
COLUMNS = ("method", "p", "kappa", "seed", "j_reward", "j_cost", "normalized_reward",
           "normalized_cost", "status", "provenance", "j_reward_se", "j_cost_se")
OK, INFEASIBLE = "ok", "infeasible"


@dataclass(frozen=True)
class RunConfig:
    layout: str = str(DEFAULT_LAYOUT)
    gamma: float = 0.95
    kappas: tuple = (2.0, 5.0, 10.0)
    ps: tuple = (0.7, 0.8, 0.9, 1.0)
    methods: tuple = ("lp", "bamdp-direct", "bamdp-soft", "unconstrained")
    seeds: tuple = (0,)
    bins: int = 256
    horizon: int = 60
    episodes: int = 10_000
    # (R_min, R_max) or "auto"; cost always normalizes by kappa
    reward_bounds: Union[str, tuple] = "auto"
    # offline-bcrl only
    dataset_mix: float = 0.5
    dataset_episodes: int = 2000
    dataset_horizon: int = 60
    eval_schedule: str = "horizon"
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for name in ("kappas", "ps", "methods", "seeds"):
            v = tuple(getattr(self, name))
            if not v:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, v)
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.reward_bounds != "auto":
            lo, hi = (float(x) for x in self.reward_bounds)
            if not hi > lo:
                raise ValueError("reward bounds need R_max > R_min")
            object.__setattr__(self, "reward_bounds", (lo, hi))


def _floats(raw: str) -> tuple:
    return tuple(float(x) for x in raw.replace(",", " ").split())


def load_run_config(path, **overrides) -> RunConfig:
    """Read ``[sweep]``, ``[budget]`` and ``[train]`` sections of an INI file."""
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    kw = {}
    sec = cp["sweep"] if "sweep" in cp else {}
    conv = {
        "layout": str, "gamma": float, "kappas": _floats, "ps": _floats,
        "methods": lambda r: tuple(r.replace(",", " ").split()),
        "seeds": lambda r: tuple(int(x) for x in r.replace(",", " ").split()),
        "bins": int, "horizon": int, "episodes": int,
        "reward_bounds": lambda r: "auto" if r.strip() == "auto" else _floats(r),
        "dataset_mix": float, "dataset_episodes": int, "dataset_horizon": int, "eval_schedule": str,
    }
    for key, raw in sec.items():
        key = key.replace("-", "_")
        if key not in conv:
            raise ValueError(f"{path}: unknown sweep option {key!r}")
        kw[key] = conv[key](raw)
    if "layout" in kw and not Path(kw["layout"]).is_absolute():
        kw["layout"] = str((Path(path).parent / kw["layout"]).resolve())
    train_kw = {}
    if "budget" in cp:
        if "bins" in cp["budget"]:
            kw["bins"] = int(cp["budget"]["bins"])
            train_kw["n_bins"] = kw["bins"]
        if "mode" in cp["budget"]:
            train_kw["budget_mode"] = cp["budget"]["mode"].strip()
    if "train" in cp:
        from .offline import load_train_config
        kw["train"] = load_train_config(path, **train_kw)
    elif train_kw:
        kw["train"] = TrainConfig(**train_kw)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if str(r["status"]).startswith("error"))

    def sorted(self) -> "SweepResult":
        key = lambda r: (r["method"], r["p"], r["kappa"], r["seed"])
        return SweepResult(sorted(self.rows, key=key))

    def select(self, **match) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]


def normalize(value: float, lo: float, hi: float) -> float:
    """``(value - lo) / (hi - lo)``, unclamped."""
    if not hi > lo:
        raise ValueError(f"normalization needs hi > lo, got lo={lo}, hi={hi}")
    return (value - lo) / (hi - lo)


def _row(method, p, kappa, seed, status, provenance, jr=math.nan, jc=math.nan, jr_se=math.nan,
         jc_se=math.nan, bounds=None) -> dict:
    nr = nc = math.nan
    if status == OK:
        if bounds is not None:
            nr = normalize(jr, *bounds)
        if kappa > 0:
            nc = normalize(jc, 0.0, kappa)
    return {"method": method, "p": float(p), "kappa": float(kappa), "seed": int(seed),
            "j_reward": jr, "j_cost": jc, "normalized_reward": nr, "normalized_cost": nc,
            "status": status, "provenance": provenance, "j_reward_se": jr_se, "j_cost_se": jc_se}


@dataclass
class _Cell:
    """Per-p artefacts shared by every method and threshold."""

    m: TabularCmdp
    cc: CostCritic
    bounds: Optional[tuple]


def _prepare(cfg: RunConfig, p: float) -> _Cell:
    m = build_gridworld(load_layout(cfg.layout, p), cfg.gamma)
    cc = min_cost_value_iteration(m)
    if cfg.reward_bounds == "auto":
        _, pu = solve_unconstrained(m)
        hi = evaluate_policy_exact(m, pu, "reward")
        lo = evaluate_policy_exact(m, min_cost_policy(cc), "reward")
        bounds = (lo, hi) if hi > lo else None
    else:
        bounds = cfg.reward_bounds
    return _Cell(m, cc, bounds)


def _bamdp(cell: _Cell, kappa: float, mode: str, bins: int):
    m = cell.m.with_threshold(kappa)
    rule = BudgetRule.make(mode, m, cell.cc)
    am = build_augmented_mdp(m, cell.cc, make_budget_grid(m.delta_max, bins), rule)
    pol = extract_policy(am, solve_augmented(am), cell.cc)
    return evaluate_augmented(am, pol.action_dist)


def run_sweep(cfg: RunConfig) -> SweepResult:
    res = SweepResult()
    for p in cfg.ps:
        try:
            cell = _prepare(cfg, p)
        except Exception as e:  # the whole p column fails, the sweep goes on
            log.error("p=%s: setup failed: %s", p, e)
            for method in cfg.methods:
                for kappa in cfg.kappas:
                    for seed in cfg.seeds:
                        res.rows.append(_row(method, p, kappa, seed, f"error: {e}", "none"))
            continue
        trained = {}
        for method in cfg.methods:
            for kappa in cfg.kappas:
                for seed in cfg.seeds:
                    try:
                        row = _run_cell(cfg, cell, method, p, kappa, seed, trained)
                    except Exception as e:
                        log.error("%s p=%s kappa=%s seed=%s failed: %s", method, p, kappa, seed, e)
                        row = _row(method, p, kappa, seed, f"error: {e}", "none")
                    res.rows.append(row)
    return res.sorted()


def _run_cell(cfg, cell, method, p, kappa, seed, trained) -> dict:
    m = cell.m.with_threshold(kappa)
    if method == "lp":
        sol = solve_cmdp_lp(m)
        if sol.status != "optimal":
            return _row(method, p, kappa, seed, INFEASIBLE, "exact")
        return _row(method, p, kappa, seed, OK, "exact", sol.j_reward, sol.j_cost, 0.0, 0.0, cell.bounds)
    if method == "unconstrained":
        _, pu = solve_unconstrained(m)
        jr, jc = evaluate_policy_exact(m, pu, "reward"), evaluate_policy_exact(m, pu, "cost")
        return _row(method, p, kappa, seed, OK, "exact", jr, jc, 0.0, 0.0, cell.bounds)
    if method in ("bamdp-direct", "bamdp-soft"):
        mode = DIRECT if method == "bamdp-direct" else SOFT
        try:
            jr, jc = _bamdp(cell, kappa, mode, cfg.bins)
        except (InfeasibleBudgetError, InfeasibleStartError) as e:
            log.info("%s p=%s kappa=%s infeasible: %s", method, p, kappa, e)
            return _row(method, p, kappa, seed, INFEASIBLE, "exact")
        return _row(method, p, kappa, seed, OK, "exact", jr, jc, 0.0, 0.0, cell.bounds)
    if method == "offline-bcrl":
        if seed not in trained:
            rng = np.random.default_rng(seed)
            d = generate_dataset(cell.m, cfg.dataset_mix, cfg.dataset_episodes, cfg.dataset_horizon, rng)
            tcfg = replace(cfg.train, seed=seed)
            trained[seed] = bcrl_train(d, m.gamma, m.delta_max, tcfg, m.n_states, m.n_actions)
        tr = trained[seed]
        r = mc_evaluate_budget_policy(m, tr.policy, kappa, cfg.horizon, cfg.episodes, seed + 1,
                                      cfg.eval_schedule, tr.cost_critic, cfg.train.budget_mode)
        return _row(method, p, kappa, seed, OK, "monte-carlo", r["j_reward"], r["j_cost"],
                    r["j_reward_se"], r["j_cost_se"], cell.bounds)
    raise ValueError(f"unknown method {method!r}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def emit_results(res: SweepResult, path, fmt: str = "csv") -> None:
    rows = res.sorted().rows
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(COLUMNS)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in COLUMNS])
    elif fmt == "json":
        out = [{c: (None if isinstance(r[c], float) and math.isnan(r[c]) else r[c]) for c in COLUMNS}
               for r in rows]
        Path(path).write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_results(path) -> SweepResult:
    """Inverse of ``emit_results(..., "csv")``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        rows = []
        for r in rd:
            row = dict(r)
            for c in ("p", "kappa", "j_reward", "j_cost", "normalized_reward", "normalized_cost",
                      "j_reward_se", "j_cost_se"):
                row[c] = float(row[c]) if row[c] != "" else math.nan
            row["seed"] = int(row["seed"])
            rows.append(row)
    return SweepResult(rows)
