"""Dense two-phase tableau simplex with Bland's pivoting rule.

Solves ``min c @ x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0``. Intended
for the small occupancy-measure LPs in this package (a few hundred columns),
where a self-contained exact solver is preferable to an external dependency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

PIVOT_TOL = 1e-11


class SimplexError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None
    fun: float | None
    iterations: int


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    piv = tab[row]
    colv = tab[:, col].copy()
    colv[row] = 0.0
    tab -= np.outer(colv, piv)


def _run(tab, basis, n_cols, max_iter, it0):
    """Bland's rule on ``tab`` (last row = reduced costs, last column = rhs)."""
    m = tab.shape[0] - 1
    it = it0
    while True:
        red = tab[-1, :n_cols]
        cand = np.flatnonzero(red < -PIVOT_TOL)
        if cand.size == 0:
            return OPTIMAL, it
        col = int(cand[0])
        colv = tab[:m, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            return UNBOUNDED, it
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
        row = int(ties[np.argmin(basis[ties])])
        _pivot(tab, row, col)
        basis[row] = col
        it += 1
        if it > max_iter:
            raise SimplexError(f"simplex exceeded {max_iter} pivots")


def linprog(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    n_ub = A_ub.shape[0]

    # standard form with slacks for the inequality rows
    A = np.block([[A_eq, np.zeros((A_eq.shape[0], n_ub))], [A_ub, np.eye(n_ub)]])
    b = np.concatenate([b_eq, b_ub])
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    m, nv = A.shape

    # phase 1: one artificial per row
    tab = np.zeros((m + 1, nv + m + 1))
    tab[:m, :nv] = A
    tab[:m, nv:nv + m] = np.eye(m)
    tab[:m, -1] = b
    tab[-1, :nv] = -A.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = np.arange(nv, nv + m)
    status, it = _run(tab, basis, nv + m, max_iter, 0)
    if status != OPTIMAL:
        raise SimplexError("phase 1 is unbounded, which cannot happen")
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -tab[-1, -1] > 1e-9 * scale:
        return LPResult(INFEASIBLE, None, None, it)

    # drive remaining artificials out of the basis
    for row in range(m):
        if basis[row] >= nv:
            nz = np.flatnonzero(np.abs(tab[row, :nv]) > 1e-9)
            if nz.size:
                _pivot(tab, row, int(nz[0]))
                basis[row] = int(nz[0])
    keep = basis < nv  # rows still on an artificial are redundant
    tab = np.vstack([tab[:m][keep], tab[-1:]])
    basis = basis[keep]
    tab = np.delete(tab, np.s_[nv:nv + m], axis=1)

    # phase 2
    cost = np.concatenate([c, np.zeros(n_ub)])
    tab[-1, :nv] = cost
    tab[-1, -1] = 0.0
    for row, j in enumerate(basis):
        tab[-1] -= cost[j] * tab[row]
    status, it = _run(tab, basis, nv, max_iter, it)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, None, None, it)
    x = np.zeros(nv)
    x[basis] = tab[:-1, -1]
    x = np.maximum(x, 0.0)[:n]
    return LPResult(OPTIMAL, x, float(c @ x), it)
