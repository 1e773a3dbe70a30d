"""JSON table format for CMDPs, critics, solutions and policies.

Every file is one JSON object with a ``kind`` tag, a ``format`` version,
scalar metadata, and dense arrays as nested lists. Python's ``json`` writes
floats with ``repr``, which round-trips IEEE doubles exactly, so
store/load is lossless. Shapes are recorded next to each array so that
empty or degenerate tables survive the trip too.

Schemas (array shapes in brackets)::

    cmdp:      gamma, cost_threshold, name,
               transition[S,A,S], reward[S,A], cost[S,A], initial_dist[S], terminal[S]
    critic:    delta_max, gamma, residual, v[S], q[S,A]
    augmented: kappa, mode, n_bins, delta_max, edges[B+1], feasible_mask[S,B],
               action_mask[S,B,A], next_bin[S,B,A,K], initial_dist[S,B]  (export only)
    solution:  status, j_reward, j_cost, occupancy[S,A], policy[S,A]
    policy:    n_bins, delta_max, action_dist[S,B,A], fallback[S], feasible[S,B]
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .budget import AugmentedMdp, make_budget_grid
from .cmdp import TabularCmdp
from .reachability import CostCritic
from .solver import BudgetPolicy, CmdpSolution

FORMAT = 1


def _arr(x) -> dict:
    x = np.asarray(x)
    if x.dtype == bool:
        data = x.astype(int).tolist()
        dtype = "bool"
    elif np.issubdtype(x.dtype, np.integer):
        data, dtype = x.tolist(), "int"
    else:
        data, dtype = x.astype(float).tolist(), "float"
    return {"shape": list(x.shape), "dtype": dtype, "data": data}


def _unarr(d: dict) -> np.ndarray:
    dt = {"bool": bool, "int": np.int64, "float": float}[d["dtype"]]
    return np.array(d["data"], dtype=dt).reshape(d["shape"])


def _num(x: float):
    # JSON has no nan/inf; store them as strings
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _denum(x) -> float:
    return float(x)


def _dump(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _load(path, kind: str) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("kind") != kind:
        raise ValueError(f"{path}: expected kind {kind!r}, found {obj.get('kind')!r}")
    if obj.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported format version {obj.get('format')!r}")
    return obj


def cmdp_to_dict(m: TabularCmdp) -> dict:
    return {
        "kind": "cmdp", "format": FORMAT, "name": m.name,
        "gamma": m.gamma, "cost_threshold": m.cost_threshold,
        "transition": _arr(m.transition), "reward": _arr(m.reward), "cost": _arr(m.cost),
        "initial_dist": _arr(m.initial_dist), "terminal": _arr(m.terminal),
    }


def cmdp_from_dict(d: dict) -> TabularCmdp:
    return TabularCmdp(
        _unarr(d["transition"]), _unarr(d["reward"]), _unarr(d["cost"]), d["gamma"],
        _unarr(d["initial_dist"]), d["cost_threshold"], terminal=_unarr(d["terminal"]),
        name=d.get("name", ""),
    )


def save_cmdp(m: TabularCmdp, path) -> None:
    _dump(cmdp_to_dict(m), path)


def load_cmdp(path) -> TabularCmdp:
    return cmdp_from_dict(_load(path, "cmdp"))


def save_critic(cc: CostCritic, path) -> None:
    _dump({"kind": "critic", "format": FORMAT, "delta_max": cc.delta_max, "gamma": cc.gamma,
           "residual": _num(cc.residual), "v": _arr(cc.v), "q": _arr(cc.q)}, path)


def load_critic(path) -> CostCritic:
    d = _load(path, "critic")
    return CostCritic(_unarr(d["v"]), _unarr(d["q"]), d["delta_max"], d["gamma"], _denum(d["residual"]))


def save_augmented(am: AugmentedMdp, path) -> None:
    _dump({
        "kind": "augmented", "format": FORMAT, "kappa": am.kappa, "mode": am.rule.mode,
        "n_bins": am.grid.n_bins, "delta_max": am.grid.delta_max, "edges": _arr(am.grid.edges),
        "feasible_mask": _arr(am.feasible_mask), "action_mask": _arr(am.action_mask),
        "next_bin": _arr(am.next_bin), "initial_dist": _arr(am.initial_dist),
    }, path)


def save_solution(sol: CmdpSolution, path) -> None:
    _dump({"kind": "solution", "format": FORMAT, "status": sol.status,
           "j_reward": _num(sol.j_reward), "j_cost": _num(sol.j_cost),
           "occupancy": _arr(sol.occupancy), "policy": _arr(sol.policy)}, path)


def load_solution(path) -> CmdpSolution:
    d = _load(path, "solution")
    return CmdpSolution(d["status"], _denum(d["j_reward"]), _denum(d["j_cost"]),
                        _unarr(d["occupancy"]), _unarr(d["policy"]))


def save_policy(pol: BudgetPolicy, path) -> None:
    g = pol.grid
    _dump({"kind": "policy", "format": FORMAT,
           "n_bins": None if g is None else g.n_bins, "delta_max": None if g is None else g.delta_max,
           "action_dist": _arr(pol.action_dist), "fallback": _arr(pol.fallback),
           "feasible": _arr(pol.feasible)}, path)


def load_policy(path) -> BudgetPolicy:
    d = _load(path, "policy")
    grid = None if d["n_bins"] is None else make_budget_grid(d["delta_max"], d["n_bins"])
    return BudgetPolicy(_unarr(d["action_dist"]), _unarr(d["fallback"]), _unarr(d["feasible"]), grid)
