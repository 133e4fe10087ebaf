"""Blocked Gibbs sampler over track-oriented data associations.

Each block is the scan-k association of one existing Bernoulli together with
the scan-k rows of the new Bernoullis, which it determines: if Bernoulli i
takes measurement j, the Bernoulli created by j becomes empty, and whatever
i released starts its own Bernoulli again.
"""

from __future__ import annotations

import bisect
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

from .assoc import AssocState, InvalidThetaError, SampleStore, Theta, make_rng, validate
from .core import NEG_INF
from .tpmbm import WeightCache


@dataclass(frozen=True)
class ConditionalDist:
    support: tuple
    log_probs: tuple

    def probabilities(self) -> list[float]:
        top = max(self.log_probs)
        if top == NEG_INF:
            raise ValueError("degenerate conditional: every candidate has zero probability")
        e = [math.exp(v - top) for v in self.log_probs]
        s = sum(e)
        return [x / s for x in e]


def split_history(h: tuple, k: int) -> tuple[tuple, int, tuple]:
    """``(entries before k, measurement at k or 0, entries after k)``."""
    times = [t for t, _ in h]
    a = bisect.bisect_left(times, k)
    if a < len(h) and h[a][0] == k:
        return h[:a], h[a][1], h[a + 1:]
    return h[:a], 0, h[a:]


def block_conditional(state: AssocState, k: int, i: int) -> ConditionalDist:
    """Conditional of Bernoulli ``i``'s scan-``k`` association given the rest.

    Candidate 0 scores w_i(history without scan k); candidate j scores
    w_i(history with (k, j)) / w_hat(k, j).  Measurements held by another
    existing Bernoulli, or whose own Bernoulli has later detections, are
    excluded, as are measurements outside the gate.
    """
    cache = state.cache
    h = state.hist[i]
    pre, cur, suf = split_history(h, k)
    if not pre:
        raise ValueError(f"Bernoulli {i} is not detected before scan {k}")
    lw = cache.log_weight
    owner = state.owner[k - 1]
    off = state.problem.offsets[k - 1]
    feasible = []
    for j in cache.candidates(pre, k):
        o = owner[j - 1]
        c = off + j - 1
        if o == i or (o == c and len(state.hist[c]) == 1):
            feasible.append(j)
    if cur and cur not in feasible:
        feasible.append(cur)
        feasible.sort()
    # The shared factor is the product of w_hat over all measurements that are
    # either held by i or free; an impossible singleton pins its measurement.
    pinned = [j for j in feasible if lw(((k, j),)) == NEG_INF]
    if len(pinned) == 1 and (cur == pinned[0] or not cur):
        j = pinned[0]
        return ConditionalDist((j,), (lw(pre + ((k, j),) + suf),))
    support = [0]
    logp = [lw(pre + suf)]
    for j in feasible:
        w = lw(pre + ((k, j),) + suf)
        w_hat = lw(((k, j),))
        if (w == NEG_INF or w_hat == NEG_INF) and j != cur:
            continue
        support.append(j)
        logp.append(w - w_hat if w_hat > NEG_INF else NEG_INF)
    return ConditionalDist(tuple(support), tuple(logp))


def sample_index(log_probs, rng) -> int:
    top = max(log_probs)
    e = [math.exp(v - top) if v > NEG_INF else 0.0 for v in log_probs]
    u = rng.random() * sum(e)
    acc = 0.0
    for n, x in enumerate(e):
        acc += x
        if u < acc:
            return n
    return max(n for n, x in enumerate(e) if x > 0.0)


def assign(state: AssocState, k: int, i: int, j_new: int):
    """Set Bernoulli ``i``'s scan-k association and repair the new-Bernoulli rows."""
    pre, cur, suf = split_history(state.hist[i], k)
    if cur == j_new:
        return
    if j_new:
        state.set_history(state.singleton_of(k, j_new), ())
        state.set_history(i, pre + ((k, j_new),) + suf)
    else:
        state.set_history(i, pre + suf)
    if cur:
        state.set_history(state.singleton_of(k, cur), ((k, cur),))


def _theta_state(theta: Theta, cache: WeightCache) -> AssocState:
    ok, bad = validate(theta)
    if not ok:
        raise InvalidThetaError(f"constraint {bad} violated")
    return AssocState(cache.problem, cache, theta)


def conditional(theta: Theta, k: int, i: int, cache: WeightCache) -> ConditionalDist:
    """Blocked conditional for existing Bernoulli ``i`` at scan ``k``."""
    p = cache.problem
    if not (1 <= k <= p.K) or not (0 <= i < p.n_existing(k)):
        raise ValueError(f"Bernoulli {i} does not exist before scan {k}")
    state = _theta_state(theta, cache)
    if not state.hist[i]:
        return ConditionalDist((0,), (0.0,))
    return block_conditional(state, k, i)


def _blocks_at(state: AssocState, k: int) -> list[int]:
    off = state.problem.offsets[k - 1]
    return sorted(i for i in state.active if i < off)


def sweep_state(state: AssocState, rng, random_scan: bool = False):
    K = state.problem.K
    scans = list(range(2, K + 1))
    if random_scan:
        rng.shuffle(scans)
    for k in scans:
        blocks = _blocks_at(state, k)
        if random_scan:
            rng.shuffle(blocks)
        for i in blocks:
            h = state.hist[i]
            if h[-1][0] < k and state.horizon[i] < k:
                continue
            gibbs_block(state, k, i, rng)


def gibbs_block(state: AssocState, k: int, i: int, rng) -> int:
    dist = block_conditional(state, k, i)
    if len(dist.support) == 1:
        j = dist.support[0]
    else:
        j = dist.support[sample_index(dist.log_probs, rng)]
    assign(state, k, i, j)
    return j


def sweep(theta: Theta, rng, cache: WeightCache, random_scan: bool = False) -> Theta:
    """One systematic (or random-order) sweep over all blocks."""
    state = _theta_state(theta, cache)
    sweep_state(state, rng, random_scan)
    return state.to_theta()


@dataclass
class ChainResult:
    store: SampleStore
    state: AssocState
    iterations: int
    runtime_s: float
    trace: list = field(default_factory=list)
    moves: dict = field(default_factory=dict)


def run(theta0: Theta, T: int, cache: WeightCache, seed=0, random_scan: bool = False,
        keep_all: bool = False, trace_every: int = 0, trace_fn: Callable | None = None,
        rng=None) -> ChainResult:
    """Run ``T`` Gibbs sweeps; the store records the state after every sweep."""
    t0 = time.perf_counter()
    rng = make_rng(seed) if rng is None else rng
    state = _theta_state(theta0, cache)
    store = SampleStore(tuple(cache.problem.m), keep_all)
    store.record(state, 0)
    trace = []
    if trace_fn is not None and trace_every:
        trace.append(trace_fn(state, 0))
    for it in range(1, T + 1):
        sweep_state(state, rng, random_scan)
        store.record(state, it)
        if trace_fn is not None and trace_every and it % trace_every == 0:
            trace.append(trace_fn(state, it))
    return ChainResult(store, state, T, time.perf_counter() - t0, trace)


# --------------------------------------------------------------------------
# Checkpoints


def write_checkpoint(path, iteration: int, state: AssocState, rng, store: SampleStore):
    rstate = rng.getstate()
    header = {"schema_version": 1, "iteration": iteration, "rng_state": [rstate[0], list(rstate[1]), rstate[2]],
              "store_digest": store.digest(), "m": list(state.problem.m)}
    with open(path, "w") as f:
        f.write("# " + json.dumps(header) + "\n")
        f.write(state.to_theta().to_text())


def read_checkpoint(path):
    """Returns ``(iteration, theta, rng, store_digest)``."""
    with open(path) as f:
        text = f.read()
    first, _, body = text.partition("\n")
    header = json.loads(first[2:])
    theta = Theta.from_text(body, header["m"])
    rng = make_rng(0)
    v, st, g = header["rng_state"]
    rng.setstate((v, tuple(st), g))
    return header["iteration"], theta, rng, header["store_digest"]
