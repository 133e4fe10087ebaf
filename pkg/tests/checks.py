"""Oracle comparisons shared by the module tests and the acceptance suite."""

from __future__ import annotations

import math

import numpy as np

import oracles
from batch_tpmbm import GaussianMoments, gibbs, kf_predict, kf_update, mh
from batch_tpmbm.assoc import AssocState, Theta, log_pi, make_rng


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def _close(a, b, tol):
    if a == -math.inf or b == -math.inf:
        return a == b
    return abs(a - b) <= tol


def log_pi_errors(t) -> float:
    """Largest relative gap between log_pi and the oracle's weight product."""
    worst = 0.0
    for vectors, (lp, _, _) in t.posterior.items():
        mine = log_pi(Theta(vectors, t.problem.m), t.cache)
        worst = max(worst, abs(mine - lp) / max(abs(lp), 1e-300))
    return worst


def conditional_errors(t) -> tuple[float, int]:
    """Largest absolute gap between blocked conditionals and exact ones."""
    worst, n = 0.0, 0
    m, off = t.problem.m, t.problem.offsets
    for vectors in t.posterior:
        th = Theta(vectors, m)
        for k in range(2, len(m) + 1):
            for i in range(off[k - 1]):
                dist = gibbs.conditional(th, k, i, t.cache)
                mine = dict(zip(dist.support, dist.probabilities()))
                exact = oracles.exact_block_conditional(t.posterior, m, vectors, k, i)
                if set(mine) != set(exact):
                    return math.inf, n
                worst = max(worst, max(abs(mine[x] - exact[x]) for x in exact))
                n += 1
    return worst, n


def _changed_scan(old, new):
    diff = set(old) ^ set(new)
    return min(k for k, _ in diff)


def move_errors(t, draws: int = 6, seed: int = 0) -> dict:
    """Check every proposed move against brute force.

    Returns per-move ``[checked, worst pi-ratio gap, worst density gap]``.
    """
    m, K = t.problem.m, t.problem.K
    rng = make_rng(seed)
    stats = {name: [0, 0.0, 0.0] for name in mh.MOVE_NAMES.values()}
    for vectors, (lp_old, _, _) in t.posterior.items():
        state = AssocState(t.problem, t.cache, Theta(vectors, m))
        h = oracles.hist_dict(vectors)
        for move in mh.MOVE_NAMES:
            for _ in range(draws):
                key = state.zkey
                out = mh.propose(state, move, rng)
                assert state.zkey == key, "proposal left the state modified"
                if out.identity:
                    continue
                new_h = dict(h)
                for i, g in out.changes.items():
                    if g:
                        new_h[i] = g
                    else:
                        new_h.pop(i, None)
                new_vec = oracles.partition_vectors(m, list(new_h.values()))
                if new_vec not in t.posterior:
                    raise AssertionError("move proposed an invalid association")
                lp_new = t.posterior[new_vec][0]
                s = stats[mh.MOVE_NAMES[move]]
                s[0] += 1
                s[1] = max(s[1], abs(out.log_pi_ratio - (lp_new - lp_old)))
                q_fwd, q_rev = _oracle_densities(t, move, out, h, new_h, vectors, new_vec, K)
                for mine, ref in ((out.log_q_forward, _log(q_fwd)), (out.log_q_reverse, _log(q_rev))):
                    if not _close(mine, ref, 1e-10):
                        s[2] = math.inf
                    elif ref > -math.inf:
                        s[2] = max(s[2], abs(mine - ref))
    return stats


def _oracle_densities(t, move, out, h, new_h, vectors, new_vec, K):
    ch = out.changes
    if move == mh.MERGE:
        a = next(i for i, g in ch.items() if g)
        b = next(i for i, g in ch.items() if not g)
        return oracles.q_merge(h, a, b), oracles.q_split(new_h, a)
    if move == mh.SPLIT:
        i = next(x for x, g in ch.items() if x in h and g and len(g) < len(h[x]) and g == h[x][:len(g)])
        c = next(x for x in ch if x != i)
        return oracles.q_split(h, i), oracles.q_merge(new_h, i, c)
    if move == mh.SWITCH:
        a, b = list(ch)
        return (oracles.q_switch(h, a, b, new_h[a], new_h[b]),
                oracles.q_switch(new_h, a, b, h[a], h[b]))
    i = next(x for x in ch if len(h.get(x, ())) >= 2)
    k = _changed_scan(h[i], new_h.get(i, ()))
    tf = h[i][0][0]
    m = t.problem.m

    def q(hh, vec_from, vec_to):
        r1 = [x for x, g in hh.items() if len(g) >= 2]
        if i not in r1:
            return 0.0
        cond = oracles.exact_block_conditional(t.posterior, m, vec_from, k, i)
        return cond.get(vec_to[k - 1][i], 0.0) / (len(r1) * (K - tf))

    return q(h, vectors, new_vec), q(new_h, new_vec, vectors)


def run_filter(m0, P0, motion, meas, zs):
    """Plain Kalman filter returning filtered and one-step predicted moments."""
    filtered, predicted = [], []
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    for t, z in enumerate(zs):
        if t:
            g = kf_predict(GaussianMoments(m, P), motion)
            predicted.append(g)
            m, P = g.mean, g.cov
        if z is not None:
            g, _ = kf_update(GaussianMoments(m, P), z, meas)
            m, P = g.mean, g.cov
        filtered.append(GaussianMoments(m, P))
    return filtered, predicted
