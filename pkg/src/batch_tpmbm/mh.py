"""Metropolis-Hastings sampler over data associations.

Four proposal moves: track update (a Gibbs block of a multi-detection
track), merge, split and track switch.  Each move's proposal probability is
evaluated in both directions so that the acceptance ratio is exact; the
index-set sizes for the reverse proposal are taken on the proposed state.
A draw that is infeasible (empty index set) proposes the current state.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

from .assoc import AssocState, SampleStore, Theta, make_rng
from .core import NEG_INF
from .gibbs import ChainResult, _theta_state, assign, block_conditional, sample_index, split_history
from .tpmbm import WeightCache

UPDATE, MERGE, SPLIT, SWITCH = 1, 2, 3, 4
MOVE_NAMES = {UPDATE: "update", MERGE: "merge", SPLIT: "split", SWITCH: "switch"}


@dataclass(frozen=True)
class MoveConfig:
    """Probabilities of the update, merge, split and switch moves."""

    update: float = 1 / 6
    merge: float = 1 / 6
    split: float = 1 / 6
    switch: float = 1 / 2

    def __post_init__(self):
        p = self.probabilities
        if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-9:
            raise ValueError("move probabilities must be non-negative and sum to 1")

    @property
    def probabilities(self) -> tuple:
        return (self.update, self.merge, self.split, self.switch)

    def of(self, move: int) -> float:
        return self.probabilities[move - 1]


PRESETS = {
    "high": MoveConfig(1 / 6, 1 / 6, 1 / 6, 1 / 2),
    "medium": MoveConfig(1 / 3, 1 / 6, 1 / 6, 1 / 3),
    "low": MoveConfig(1 / 2, 1 / 6, 1 / 6, 1 / 6),
}


@dataclass
class MoveOutcome:
    """A proposed change ``{bernoulli: new history}`` and its MH ingredients."""

    move: int
    changes: dict
    log_q_forward: float = 0.0
    log_q_reverse: float = 0.0
    log_pi_ratio: float = 0.0
    accepted: bool = False

    @property
    def identity(self) -> bool:
        return not self.changes

    @property
    def log_accept(self) -> float:
        if self.identity:
            return 0.0
        return self.log_pi_ratio + self.log_q_reverse - self.log_q_forward

    def proposed(self, state: AssocState) -> Theta:
        hists = state.nonempty()
        for i, h in self.changes.items():
            if h:
                hists[i] = h
            else:
                hists.pop(i, None)
        from .assoc import theta_from_histories

        return theta_from_histories(state.problem.m, hists)


# --------------------------------------------------------------------------
# Proposal densities (evaluated on whatever state is current)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else NEG_INF


def q_update(state: AssocState, i: int, t: int, log_cond: float) -> float:
    if i not in state.r1:
        return NEG_INF
    span = state.tend[i] - state.t_first(i)
    if not state.t_first(i) < t <= state.tend[i]:
        return NEG_INF
    return -math.log(len(state.r1)) - math.log(span) + log_cond


def q_merge(state: AssocState, a: int, b: int) -> float:
    """Probability that a merge proposes combining Bernoullis ``a`` and ``b``."""
    n = len(state.rpos)
    if n == 0:
        return NEG_INF
    tot = 0.0
    if a in state.rpos:
        tot += 1.0 / state.count_disjoint(a)
    if b in state.rpos:
        tot += 1.0 / state.count_disjoint(b)
    return _log(tot) - math.log(n)


def q_split(state: AssocState, i: int) -> float:
    """Probability that a split proposes a particular cut of Bernoulli ``i``."""
    if i not in state.r1:
        return NEG_INF
    return -math.log(len(state.r1)) - math.log(len(state.hist[i]) - 1)


def _switch_window(state: AssocState, a: int, b: int) -> tuple[int, int]:
    lo = max(state.t_first(a), state.t_first(b)) + 1
    hi = max(state.t_last(a), state.t_last(b))
    return lo, hi


def _switch_equivalents(state: AssocState, a: int, b: int, t: int, lo: int, hi: int) -> int:
    """Number of switch times in the window giving the same result as ``t``.

    Switching at ``t`` or ``t' > t`` agrees exactly when neither Bernoulli is
    detected in ``[t, t')``.
    """
    seen = {k for k, _ in state.hist[a]} | {k for k, _ in state.hist[b]}
    s0 = t
    while s0 - 1 >= lo and (s0 - 1) not in seen:
        s0 -= 1
    s1 = t
    while s1 + 1 <= hi and s1 not in seen:
        s1 += 1
    return s1 - s0 + 1


def q_switch(state: AssocState, a: int, b: int, t: int) -> float:
    n = len(state.r1)
    if a not in state.r1 or b not in state.r1 or n < 2:
        return NEG_INF
    lo, hi = _switch_window(state, a, b)
    if not lo <= t <= hi:
        return NEG_INF
    eq = _switch_equivalents(state, a, b, t, lo, hi)
    return math.log(2.0) - math.log(n * (n - 1)) + math.log(eq) - math.log(hi - lo + 1)


# --------------------------------------------------------------------------
# Moves


def _evaluate(state: AssocState, out: MoveOutcome, q_rev: Callable[[], float]):
    """Fill the pi ratio and the reverse density by applying then undoing the change."""
    lw = state.cache.log_weight
    old = {i: state.hist[i] for i in out.changes}
    new_lw = [lw(h) for h in out.changes.values()]
    if any(w == NEG_INF for w in new_lw):
        out.log_pi_ratio = NEG_INF
        out.log_q_reverse = NEG_INF
        return
    out.log_pi_ratio = math.fsum(new_lw) - math.fsum(state.lw[i] for i in old)
    _apply(state, out.changes)
    out.log_q_reverse = q_rev()
    _apply(state, old)


def _apply(state: AssocState, changes: dict):
    # clear first so ownership of moved measurements is consistent
    for i in changes:
        state.set_history(i, ())
    for i, h in changes.items():
        if h:
            state.set_history(i, h)


def track_update_move(state: AssocState, rng) -> MoveOutcome:
    out = MoveOutcome(UPDATE, {})
    if not len(state.r1):
        return out
    i = state.r1.draw(rng)
    tf, te = state.t_first(i), state.tend[i]
    if te <= tf:
        return out
    t = tf + 1 + int(rng.random() * (te - tf))
    dist = block_conditional(state, t, i)
    n = sample_index(dist.log_probs, rng) if len(dist.support) > 1 else 0
    j = dist.support[n]
    _, cur, _ = split_history(state.hist[i], t)
    if j == cur:
        return out
    probs = dist.probabilities()
    log_fwd = _log(probs[n])
    log_rev = _log(probs[dist.support.index(cur)])
    old = {x: state.hist[x] for x in _touched(state, t, i, cur, j)}
    assign(state, t, i, j)
    out.changes = {x: state.hist[x] for x in old}
    out.log_q_reverse = q_update(state, i, t, log_rev)
    _apply(state, old)
    out.log_q_forward = q_update(state, i, t, log_fwd)
    lw = state.cache.log_weight
    out.log_pi_ratio = math.fsum(lw(h) for h in out.changes.values()) - math.fsum(state.lw[x] for x in old)
    return out


def _touched(state: AssocState, k: int, i: int, cur: int, j: int) -> list[int]:
    out = [i]
    if cur:
        out.append(state.singleton_of(k, cur))
    if j:
        out.append(state.singleton_of(k, j))
    return out


def merge_move(state: AssocState, rng) -> MoveOutcome:
    out = MoveOutcome(MERGE, {})
    if not len(state.rpos):
        return out
    i = state.rpos.draw(rng)
    if state.count_disjoint(i) == 0:
        return out
    i2 = state.draw_disjoint(i, rng)
    a, b = (i, i2) if state.t_first(i) < state.t_first(i2) else (i2, i)
    merged = tuple(sorted(state.hist[a] + state.hist[b]))
    out.changes = {a: merged, b: ()}
    out.log_q_forward = q_merge(state, a, b)
    _evaluate(state, out, lambda: q_split(state, a))
    return out


def split_move(state: AssocState, rng) -> MoveOutcome:
    out = MoveOutcome(SPLIT, {})
    if not len(state.r1):
        return out
    i = state.r1.draw(rng)
    h = state.hist[i]
    n = 1 + int(rng.random() * (len(h) - 1))
    head, tail = h[:n], h[n:]
    c = state.singleton_of(*tail[0])
    out.changes = {i: head, c: tail}
    out.log_q_forward = q_split(state, i)
    _evaluate(state, out, lambda: q_merge(state, i, c))
    return out


def switch_move(state: AssocState, rng) -> MoveOutcome:
    out = MoveOutcome(SWITCH, {})
    n = len(state.r1)
    if n < 2:
        return out
    a = state.r1.draw(rng)
    b = a
    while b == a:
        b = state.r1.draw(rng)
    lo, hi = _switch_window(state, a, b)
    if hi < lo:
        return out
    t = lo + int(rng.random() * (hi - lo + 1))
    ha, hb = state.hist[a], state.hist[b]
    pa, _, _ = split_history(ha, t)
    pb, _, _ = split_history(hb, t)
    na = pa + hb[len(pb):]
    nb = pb + ha[len(pa):]
    if na == ha:
        return out
    # tails never contain a creating measurement because t > both first times
    out.changes = {a: na, b: nb}
    out.log_q_forward = q_switch(state, a, b, t)
    _evaluate(state, out, lambda: q_switch(state, a, b, t))
    return out


MOVES = {UPDATE: track_update_move, MERGE: merge_move, SPLIT: split_move, SWITCH: switch_move}


def propose(state: AssocState, move: int, rng) -> MoveOutcome:
    return MOVES[move](state, rng)


def mh_step(state: AssocState, config: MoveConfig, rng) -> MoveOutcome:
    u = rng.random()
    acc = 0.0
    move = SWITCH
    for c, p in enumerate(config.probabilities, start=1):
        acc += p
        if u < acc:
            move = c
            break
    out = propose(state, move, rng)
    if out.identity:
        out.accepted = False
        return out
    # merge and split are each other's reverse, so their probabilities enter the ratio
    reverse = {MERGE: SPLIT, SPLIT: MERGE}.get(move, move)
    log_a = out.log_accept + _log(config.of(reverse)) - _log(config.of(move))
    if log_a >= 0.0 or rng.random() < math.exp(log_a):
        _apply(state, out.changes)
        out.accepted = True
    return out


def run(theta0: Theta, T: int, cache: WeightCache, config: MoveConfig = PRESETS["high"], seed=0,
        keep_all: bool = False, trace_every: int = 0, trace_fn: Callable | None = None,
        diagnostics: list | None = None, rng=None) -> ChainResult:
    """Run ``T`` MH iterations; the store records the state after every iteration.

    When ``diagnostics`` is a list, one ``(iteration, move, accepted, log_pi)``
    tuple is appended per iteration.
    """
    t0 = time.perf_counter()
    rng = make_rng(seed) if rng is None else rng
    state = _theta_state(theta0, cache)
    store = SampleStore(tuple(cache.problem.m), keep_all)
    store.record(state, 0)
    trace = []
    moves = {name: [0, 0] for name in MOVE_NAMES.values()}
    if trace_fn is not None and trace_every:
        trace.append(trace_fn(state, 0))
    for it in range(1, T + 1):
        out = mh_step(state, config, rng)
        stats = moves[MOVE_NAMES[out.move]]
        stats[0] += 1
        stats[1] += out.accepted
        store.record(state, it)
        if diagnostics is not None:
            diagnostics.append((it, out.move, out.accepted, state.log_pi))
        if trace_fn is not None and trace_every and it % trace_every == 0:
            trace.append(trace_fn(state, it))
    return ChainResult(store, state, T, time.perf_counter() - t0, trace, moves)
