"""Hot loops: augmented value iteration, batched rollouts, tabular SGD steps.

Every kernel has a numba version (``_nb_*``) and a vectorized numpy version
(``_np_*``). The public wrappers dispatch on ``_accel.USE_NUMBA``. Random
numbers are always drawn by the caller with numpy and passed in, so both
paths consume identical streams.

Successor lists are padded: ``idx[s, a, k]`` / ``pcdf[s, a, k]`` hold the
k-th possible next state and the running cumulative probability.
"""

import numpy as np

from . import _accel
from ._accel import njit

# --------------------------------------------------------------------------
# shared scalar helpers
# --------------------------------------------------------------------------


@njit
def _nb_pick(cdf, u):
    # first k with cdf[k] > u * total; cdf is non-decreasing
    target = u * cdf[cdf.shape[0] - 1]
    n = cdf.shape[0]
    for k in range(n):
        if cdf[k] > target:
            return k
    k = n - 1
    while k > 0 and cdf[k] == cdf[k - 1]:
        k -= 1
    return k


def _np_pick(cdf, u):
    """Row-wise inverse-CDF draw: ``cdf`` is (n, m), ``u`` is (n,)."""
    target = u * cdf[:, -1]
    k = (cdf <= target[:, None]).sum(axis=1)
    m = cdf.shape[1]
    over = k >= m
    if np.any(over):
        # u*total hit the top because of rounding: take the last non-empty slot
        step = np.diff(cdf[over], axis=1, prepend=0.0) > 0
        k[over] = m - 1 - np.argmax(step[:, ::-1], axis=1)
    return k


@njit
def _nb_snap(edges, delta):
    n_bins = edges.shape[0] - 1
    b = np.searchsorted(edges, delta, side="right") - 1
    if b < 0:
        b = 0
    if b > n_bins - 1:
        b = n_bins - 1
    return b


def _np_snap(edges, delta):
    n_bins = edges.shape[0] - 1
    b = np.searchsorted(edges, delta, side="right") - 1
    return np.clip(b, 0, n_bins - 1)


# --------------------------------------------------------------------------
# masked value iteration over (state, budget-bin)
# --------------------------------------------------------------------------


@njit
def _nb_aug_backup(V, r, idx, prob, nb, act_mask, feas, fallback, gamma, Q, Vout):
    S, B, A = act_mask.shape
    K = idx.shape[2]
    resid = 0.0
    for s in range(S):
        for b in range(B):
            best = -np.inf
            for a in range(A):
                acc = 0.0
                for k in range(K):
                    p = prob[s, a, k]
                    if p > 0.0:
                        acc += p * V[idx[s, a, k], nb[s, b, a, k]]
                q = r[s, a] + gamma * acc
                Q[s, b, a] = q
                if feas[s, b] and act_mask[s, b, a] and q > best:
                    best = q
            if not feas[s, b]:
                best = Q[s, b, fallback[s]]
            Vout[s, b] = best
            d = abs(best - V[s, b])
            if d > resid:
                resid = d
    return resid


def _np_aug_backup(V, r, idx, prob, nb, act_mask, feas, fallback, gamma, Q, Vout):
    S, B, A = act_mask.shape
    nxt = V[idx[:, None, :, :], nb]  # (S, B, A, K)
    Q[...] = r[:, None, :] + gamma * (prob[:, None, :, :] * nxt).sum(axis=3)
    masked = np.where(act_mask, Q, -np.inf).max(axis=2)
    fb = np.take_along_axis(Q, np.broadcast_to(fallback[:, None, None], (S, B, 1)), axis=2)[..., 0]
    Vout[...] = np.where(feas, masked, fb)
    return float(np.abs(Vout - V).max())


def aug_value_iteration(r, idx, prob, nb, act_mask, feas, fallback, gamma, tol, max_iters):
    """Returns ``(Q, V, residual, iterations)``; V starts at zero."""
    S, B, A = act_mask.shape
    V = np.zeros((S, B))
    Vn = np.zeros((S, B))
    Q = np.zeros((S, B, A))
    backup = _nb_aug_backup if _accel.USE_NUMBA else _np_aug_backup
    resid = np.inf
    it = 0
    while it < max_iters:
        resid = backup(V, r, idx, prob, nb, act_mask, feas, fallback, gamma, Q, Vn)
        V, Vn = Vn, V
        it += 1
        if resid <= tol:
            break
    # final Q consistent with returned V
    backup(V, r, idx, prob, nb, act_mask, feas, fallback, gamma, Q, Vn)
    return Q, V, resid, it


# --------------------------------------------------------------------------
# batched rollouts
# --------------------------------------------------------------------------


@njit
def _nb_rollout_stationary(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u0, u):
    n, H = u.shape[0], u.shape[1]
    jr = np.zeros(n)
    jc = np.zeros(n)
    for i in range(n):
        s = _nb_pick(mu_cdf, u0[i])
        g = 1.0
        for t in range(H):
            if term[s]:
                break
            a = _nb_pick(pi_cdf[s], u[i, t, 0])
            k = _nb_pick(pcdf[s, a], u[i, t, 1])
            jr[i] += g * r[s, a]
            jc[i] += g * c[s, a]
            g *= gamma
            s = idx[s, a, k]
    return jr, jc


def _np_rollout_stationary(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u0, u):
    n, H = u.shape[0], u.shape[1]
    s = _np_pick(np.broadcast_to(mu_cdf, (n, mu_cdf.size)), u0)
    alive = np.ones(n, dtype=bool)
    jr = np.zeros(n)
    jc = np.zeros(n)
    g = 1.0
    for t in range(H):
        alive &= ~term[s]
        if not alive.any():
            break
        a = _np_pick(pi_cdf[s], u[:, t, 0])
        k = _np_pick(pcdf[s, a], u[:, t, 1])
        jr += np.where(alive, g * r[s, a], 0.0)
        jc += np.where(alive, g * c[s, a], 0.0)
        g *= gamma
        s = np.where(alive, idx[s, a, k], s)
    return jr, jc


def rollout_stationary(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u):
    """Discounted returns of ``u.shape[0]`` episodes of length ``u.shape[1] - 1``.

    ``u[:, 0, 0]`` selects the start state; ``u[:, t + 1, :2]`` drive step t.
    """
    u0 = np.ascontiguousarray(u[:, 0, 0])
    us = np.ascontiguousarray(u[:, 1:, :2])
    fn = _nb_rollout_stationary if _accel.USE_NUMBA else _np_rollout_stationary
    return fn(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u0, us)


MODE_TRACK = 0
MODE_HORIZON = 1


@njit
def _nb_schedule(kappa, spent, gamma, H, t, delta_max):
    rem = kappa - spent
    if rem < 0.0:
        rem = 0.0
    left = H - t
    if left == 1:
        d = rem
    else:
        d = rem / (1.0 - gamma) * (1.0 - gamma ** left) / left
    if d > delta_max:
        d = delta_max
    return d


@njit
def _nb_rollout_budget(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u0, u,
                       edges, b0, offset, feas, delta_max, mode, kappa):
    n, H = u.shape[0], u.shape[1]
    jr = np.zeros(n)
    jc = np.zeros(n)
    bad = np.zeros(n, dtype=np.int64)
    for i in range(n):
        s = _nb_pick(mu_cdf, u0[i])
        b = b0[s]
        spent = 0.0
        g = 1.0
        for t in range(H):
            if term[s]:
                break
            if mode == 1:
                b = _nb_snap(edges, _nb_schedule(kappa, spent, gamma, H, t, delta_max))
            if not feas[s, b]:
                bad[i] += 1
            a = _nb_pick(pi_cdf[s, b], u[i, t, 0])
            k = _nb_pick(pcdf[s, a], u[i, t, 1])
            jr[i] += g * r[s, a]
            jc[i] += g * c[s, a]
            spent += c[s, a]
            g *= gamma
            if mode == 0:
                d = (edges[b] + offset[s, a, k]) / gamma
                if d < 0.0:
                    d = 0.0
                if d > delta_max:
                    d = delta_max
                b = _nb_snap(edges, d)
            s = idx[s, a, k]
    return jr, jc, bad


def _np_rollout_budget(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u0, u,
                       edges, b0, offset, feas, delta_max, mode, kappa):
    n, H = u.shape[0], u.shape[1]
    s = _np_pick(np.broadcast_to(mu_cdf, (n, mu_cdf.size)), u0)
    b = b0[s]
    alive = np.ones(n, dtype=bool)
    jr = np.zeros(n)
    jc = np.zeros(n)
    bad = np.zeros(n, dtype=np.int64)
    spent = np.zeros(n)
    g = 1.0
    for t in range(H):
        alive &= ~term[s]
        if not alive.any():
            break
        if mode == MODE_HORIZON:
            left = H - t
            d = np.maximum(kappa - spent, 0.0)
            if left > 1:
                d = d / (1.0 - gamma) * (1.0 - gamma ** left) / left
            b = _np_snap(edges, np.minimum(d, delta_max))
        bad += (alive & ~feas[s, b]).astype(np.int64)
        a = _np_pick(pi_cdf[s, b], u[:, t, 0])
        k = _np_pick(pcdf[s, a], u[:, t, 1])
        jr += np.where(alive, g * r[s, a], 0.0)
        jc += np.where(alive, g * c[s, a], 0.0)
        spent += np.where(alive, c[s, a], 0.0)
        g *= gamma
        if mode == MODE_TRACK:
            d = np.clip((edges[b] + offset[s, a, k]) / gamma, 0.0, delta_max)
            b = np.where(alive, _np_snap(edges, d), b)
        s = np.where(alive, idx[s, a, k], s)
    return jr, jc, bad


def rollout_budget(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u,
                   edges, b0, offset, feas, delta_max, mode, kappa):
    """Budget-conditioned episodes; returns ``(jr, jc, infeasible_visits)``.

    ``mode == MODE_TRACK`` evolves the bin with the affine update
    ``(rep(b) + offset[s, a, k]) / gamma``; ``MODE_HORIZON`` recomputes the
    budget from the finite-horizon schedule at every step.
    """
    u0 = np.ascontiguousarray(u[:, 0, 0])
    us = np.ascontiguousarray(u[:, 1:, :2])
    fn = _nb_rollout_budget if _accel.USE_NUMBA else _np_rollout_budget
    return fn(pi_cdf, idx, pcdf, r, c, mu_cdf, term, gamma, u0, us,
              edges, b0, offset, feas, float(delta_max), int(mode), float(kappa))


# --------------------------------------------------------------------------
# tabular SGD steps (one gradient step on a minibatch)
#
# Per-entry gradients are averaged over the batch samples that touch the
# entry, then applied with step size lr.
# --------------------------------------------------------------------------


@njit
def _nb_td_step(q, v, sa, sig, nxt, done, gamma, lr):
    # q: (Nq,), v: (Nv,) flattened tables. sa: q-index, nxt: v-index of s'
    n = sa.shape[0]
    grad = np.zeros(q.shape[0])
    cnt = np.zeros(q.shape[0])
    for i in range(n):
        tgt = sig[i]
        if not done[i]:
            tgt += gamma * v[nxt[i]]
        grad[sa[i]] += tgt - q[sa[i]]
        cnt[sa[i]] += 1.0
    for j in range(q.shape[0]):
        if cnt[j] > 0:
            q[j] += lr * grad[j] / cnt[j]


def _np_td_step(q, v, sa, sig, nxt, done, gamma, lr):
    tgt = sig + np.where(done, 0.0, gamma * v[nxt])
    grad = np.zeros(q.shape[0])
    cnt = np.zeros(q.shape[0])
    np.add.at(grad, sa, tgt - q[sa])
    np.add.at(cnt, sa, 1.0)
    hit = cnt > 0
    q[hit] += lr * grad[hit] / cnt[hit]


@njit
def _nb_expectile_step(v, qt, sa, st, tau, lr):
    n = sa.shape[0]
    grad = np.zeros(v.shape[0])
    cnt = np.zeros(v.shape[0])
    for i in range(n):
        u = qt[sa[i]] - v[st[i]]
        w = tau if u >= 0.0 else 1.0 - tau
        grad[st[i]] += 2.0 * w * u
        cnt[st[i]] += 1.0
    for j in range(v.shape[0]):
        if cnt[j] > 0:
            v[j] += lr * grad[j] / cnt[j]


def _np_expectile_step(v, qt, sa, st, tau, lr):
    u = qt[sa] - v[st]
    w = np.where(u >= 0.0, tau, 1.0 - tau)
    grad = np.zeros(v.shape[0])
    cnt = np.zeros(v.shape[0])
    np.add.at(grad, st, 2.0 * w * u)
    np.add.at(cnt, st, 1.0)
    hit = cnt > 0
    v[hit] += lr * grad[hit] / cnt[hit]


def td_step(q, v, sa, sig, nxt, done, gamma, lr):
    """In place: move ``q[sa]`` toward ``sig + gamma * v[nxt]`` (no bootstrap if done)."""
    fn = _nb_td_step if _accel.USE_NUMBA else _np_td_step
    fn(q, v, sa, sig, nxt, done, float(gamma), float(lr))


def expectile_step(v, qt, sa, st, tau, lr):
    """In place: one gradient step of the tau-expectile loss of ``qt[sa] - v[st]``."""
    fn = _nb_expectile_step if _accel.USE_NUMBA else _np_expectile_step
    fn(v, qt, sa, st, float(tau), float(lr))
