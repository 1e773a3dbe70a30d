"""Stochastic grid-world CMDPs and offline dataset generation.

Layout characters: ``S`` start, ``G`` goal, ``C`` cost cell, ``.`` empty,
``#`` wall. Actions are up, down, left, right. The intended move happens
with probability ``p``; each other direction with ``(1 - p) / 3``. Moves off
the grid or into a wall leave the agent in place. Every step from a non-goal
cell earns reward -1; arriving in a cost cell costs 1; goals are absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cmdp import TabularCmdp
from .offline import TransitionDataset

CELL_CHARS = {"S": "start", "G": "goal", "C": "cost", ".": "empty", "#": "wall"}
ACTIONS = ("up", "down", "left", "right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

DEFAULT_LAYOUT = Path(__file__).with_name("layouts") / "default.grid"


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class GridLayout:
    cells: tuple  # tuple of row strings
    p_intended: float = 1.0

    @property
    def rows(self) -> int:
        return len(self.cells)

    @property
    def cols(self) -> int:
        return len(self.cells[0])

    def kind(self, r: int, c: int) -> str:
        return CELL_CHARS[self.cells[r][c]]

    def find(self, ch: str) -> list[tuple[int, int]]:
        return [(r, c) for r, row in enumerate(self.cells) for c, x in enumerate(row) if x == ch]

    def with_p(self, p: float) -> "GridLayout":
        return GridLayout(self.cells, p)


def parse_layout(text: str, p_intended: float = 1.0) -> GridLayout:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith(";")]
    errors = []
    if not lines:
        raise LayoutError("empty layout")
    width = len(lines[0])
    for i, ln in enumerate(lines):
        if len(ln) != width:
            errors.append(f"line {i + 1}: length {len(ln)} != {width} (non-rectangular)")
        bad = sorted(set(ln) - set(CELL_CHARS))
        if bad:
            errors.append(f"line {i + 1}: unknown characters {''.join(bad)!r}")
    n_start = sum(ln.count("S") for ln in lines)
    if n_start != 1:
        errors.append(f"expected exactly one start, found {n_start}" + (" (multiple starts)" if n_start > 1 else ""))
    if sum(ln.count("G") for ln in lines) < 1:
        errors.append("no goal cell")
    if not (0.0 < p_intended <= 1.0):
        errors.append(f"p_intended={p_intended} outside (0, 1]")
    if errors:
        raise LayoutError("; ".join(errors))
    return GridLayout(tuple(lines), float(p_intended))


def load_layout(path, p_intended: float = 1.0) -> GridLayout:
    return parse_layout(Path(path).read_text(encoding="utf-8"), p_intended)


def cell_index(layout: GridLayout) -> dict:
    """Map ``(row, col)`` of every non-wall cell to its state index (row-major)."""
    out = {}
    for r in range(layout.rows):
        for c in range(layout.cols):
            if layout.cells[r][c] != "#":
                out[(r, c)] = len(out)
    return out


def build_gridworld(layout: GridLayout, gamma: float, kappa: float = 0.0, strict: bool = False) -> TabularCmdp:
    """Tabular CMDP for ``layout``.

    ``strict=True`` renormalizes over legal moves instead of folding blocked
    moves onto the current cell.
    """
    p = layout.p_intended
    index = cell_index(layout)
    S, A = len(index), len(ACTIONS)
    T = np.zeros((S, A, S))
    R = np.zeros((S, A))
    goal = np.zeros(S, dtype=bool)
    costly = np.zeros(S, dtype=bool)
    for (r, c), s in index.items():
        goal[s] = layout.cells[r][c] == "G"
        costly[s] = layout.cells[r][c] == "C"

    for (r, c), s in index.items():
        if goal[s]:
            T[s, :, s] = 1.0
            continue
        R[s] = -1.0
        dest = []
        for dr, dc in MOVES:
            rr, cc = r + dr, c + dc
            dest.append(index.get((rr, cc)) if 0 <= rr < layout.rows and 0 <= cc < layout.cols else None)
        for a in range(A):
            w = np.full(A, (1.0 - p) / 3.0)
            w[a] = p
            if strict:
                legal = np.array([d is not None for d in dest])
                if legal.any() and w[legal].sum() > 0:
                    w = np.where(legal, w, 0.0) / w[legal].sum()
            for m, d in enumerate(dest):
                T[s, a, s if d is None else d] += w[m]
    C = T @ costly.astype(float)
    C[goal] = 0.0
    mu = np.zeros(S)
    mu[index[layout.find("S")[0]]] = 1.0
    return TabularCmdp(T, R, C, gamma, mu, kappa, terminal=goal, name=f"grid(p={p})")


def generate_dataset(
    m: TabularCmdp, mix: float, n_episodes: int, horizon: int, rng: np.random.Generator,
    behavior: np.ndarray | None = None,
) -> TransitionDataset:
    """Roll out ``mix * uniform + (1 - mix) * behavior`` and log every transition.

    ``behavior`` defaults to the unconstrained reward-optimal policy.
    """
    from .solver import solve_unconstrained

    if not (0.0 <= mix <= 1.0):
        raise ValueError("mix must lie in [0, 1]")
    if behavior is None:
        _, behavior = solve_unconstrained(m)
    pi = mix / m.n_actions + (1.0 - mix) * np.asarray(behavior, dtype=float)
    pi_cdf = np.cumsum(pi, axis=1)
    T_cdf = np.cumsum(m.transition, axis=2)
    mu_cdf = np.cumsum(m.initial_dist)
    recs = []
    for _ in range(n_episodes):
        u = rng.random(2 * horizon + 1)
        s = _pick(mu_cdf, u[0])
        for t in range(horizon):
            if m.terminal[s]:
                break
            a = _pick(pi_cdf[s], u[2 * t + 1])
            sp = _pick(T_cdf[s, a], u[2 * t + 2])
            recs.append((s, a, m.reward[s, a], m.cost[s, a], sp, bool(m.terminal[sp])))
            s = sp
    return TransitionDataset.from_records(recs)


def _pick(cdf, u):
    i = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if i >= cdf.size:
        i = int(np.flatnonzero(np.diff(cdf, prepend=0.0) > 0)[-1])
    return i


def coverage(d: TransitionDataset, m: TabularCmdp) -> float:
    """Fraction of non-terminal ``(s, a)`` pairs that appear in the dataset."""
    seen = np.zeros((m.n_states, m.n_actions), dtype=bool)
    seen[d.s, d.a] = True
    live = ~m.terminal
    return float(seen[live].mean()) if live.any() else 1.0
