"""Track-oriented multi-scan data association.

A :class:`Theta` holds one integer vector per scan: ``theta[k-1][i]`` is the
measurement index (1-based, 0 for none) assigned at scan ``k`` to Bernoulli
``i`` (0-based).  Bernoulli ``i`` exists at scan ``k`` when
``i < n_{k|k} = offsets[k]``; the last ``m_k`` entries of the scan-k vector
belong to the Bernoullis created at that scan.

:class:`AssocState` is the mutable sampler-side mirror of a Theta.  It keeps
per-Bernoulli histories plus the inverted measurement -> Bernoulli index,
the cached local weights, and the index sets the MCMC moves draw from.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import NEG_INF
from .tpmbm import HypothesisKey, Problem, WeightCache


class InvalidThetaError(ValueError):
    pass


CONSTRAINTS = {
    1: "existing Bernoulli assigned outside 0..m_k",
    2: "new Bernoulli assigned a measurement other than its own",
    3: "measurement assigned to two Bernoullis",
    4: "measurement not assigned",
    5: "non-existent new Bernoulli detected later",
    6: "later-detected Bernoulli not created by its own measurement",
}


def _offsets(m: Sequence[int]) -> list[int]:
    out = [0]
    for mk in m:
        out.append(out[-1] + mk)
    return out


@dataclass(frozen=True)
class Theta:
    per_scan: tuple
    m: tuple

    def __post_init__(self):
        object.__setattr__(self, "per_scan", tuple(np.asarray(v, dtype=np.int64) for v in self.per_scan))
        object.__setattr__(self, "m", tuple(int(x) for x in self.m))

    @property
    def K(self) -> int:
        return len(self.m)

    @property
    def offsets(self) -> list[int]:
        return _offsets(self.m)

    def __eq__(self, other):
        return (isinstance(other, Theta) and self.m == other.m
                and all(np.array_equal(a, b) for a, b in zip(self.per_scan, other.per_scan)))

    def __hash__(self):
        return hash((self.m, tuple(tuple(v.tolist()) for v in self.per_scan)))

    def to_text(self) -> str:
        return "\n".join(" ".join(str(int(x)) for x in v) for v in self.per_scan) + "\n"

    @classmethod
    def from_text(cls, text: str, m: Sequence[int]) -> "Theta":
        lines = text.splitlines()
        lines = [ln for ln in lines if not ln.startswith("#")]
        if len(lines) < len(m):
            raise InvalidThetaError(f"expected {len(m)} scan lines, got {len(lines)}")
        return cls(tuple(np.array([int(x) for x in ln.split()], dtype=np.int64) for ln in lines[: len(m)]), m)


def theta_from_histories(m: Sequence[int], hists: dict | Sequence) -> Theta:
    off = _offsets(m)
    vecs = [np.zeros(off[k], dtype=np.int64) for k in range(1, len(m) + 1)]
    items = hists.items() if isinstance(hists, dict) else enumerate(hists)
    for i, h in items:
        for k, j in h:
            if i >= off[k]:
                raise InvalidThetaError(f"Bernoulli {i} does not exist at scan {k}")
            vecs[k - 1][i] = j
    return Theta(tuple(vecs), tuple(m))


def theta_hat(m: Sequence[int]) -> Theta:
    """Every measurement starts its own Bernoulli and is never re-detected."""
    off = _offsets(m)
    hists = {off[k - 1] + j - 1: ((k, j),) for k in range(1, len(m) + 1) for j in range(1, m[k - 1] + 1)}
    return theta_from_histories(m, hists)


def validate(theta: Theta) -> tuple[bool, int | None]:
    """Check constraints 1-6; returns ``(ok, first violated constraint)``."""
    m = theta.m
    off = _offsets(m)
    K = len(m)
    if len(theta.per_scan) != K:
        raise InvalidThetaError("number of scans does not match measurement counts")
    for k in range(1, K + 1):
        if theta.per_scan[k - 1].shape != (off[k],):
            raise InvalidThetaError(f"scan {k}: expected length {off[k]}, got {theta.per_scan[k - 1].shape}")
    for k in range(1, K + 1):
        v = theta.per_scan[k - 1]
        n_prev, mk = off[k - 1], m[k - 1]
        if np.any(v[:n_prev] < 0) or np.any(v[:n_prev] > mk):
            return False, 1
        new = v[n_prev:]
        if np.any((new != 0) & (new != np.arange(1, mk + 1))):
            return False, 2
        pos = v[v > 0]
        if len(pos) != len(np.unique(pos)):
            return False, 3
        if len(np.unique(pos)) != mk:
            return False, 4
    for k in range(1, K + 1):
        n_prev, mk = off[k - 1], m[k - 1]
        for i in range(n_prev, n_prev + mk):
            later = any(theta.per_scan[t - 1][i] > 0 for t in range(k + 1, K + 1))
            if later and theta.per_scan[k - 1][i] == 0:
                return False, 5
            if later and theta.per_scan[k - 1][i] != i - n_prev + 1:
                return False, 6
    return True, None


def histories(theta: Theta) -> list[HypothesisKey]:
    ok, bad = validate(theta)
    if not ok:
        raise InvalidThetaError(f"constraint {bad} violated: {CONSTRAINTS[bad]}")
    off = theta.offsets
    hists: list[list] = [[] for _ in range(off[-1])]
    for k, v in enumerate(theta.per_scan, start=1):
        for i in np.flatnonzero(v):
            hists[i].append((k, int(v[i])))
    return [HypothesisKey(i, tuple(h)) for i, h in enumerate(hists)]


def log_pi(theta: Theta, cache: WeightCache) -> float:
    """Unnormalized log-probability of a data association (-inf when invalid)."""
    try:
        ok, _ = validate(theta)
    except InvalidThetaError:
        return NEG_INF
    if not ok:
        return NEG_INF
    return math.fsum(cache.log_weight(key.history) for key in histories(theta))


def precompute_single_detection_weights(cache: WeightCache) -> dict:
    """ln of the weight of "detected once, at the creating scan" for every measurement."""
    return cache.single_detection_weights()


# --------------------------------------------------------------------------
# Mutable sampler state


class IndexedSet:
    """Set with O(1) add/remove/uniform draw."""

    __slots__ = ("items", "pos")

    def __init__(self):
        self.items: list = []
        self.pos: dict = {}

    def add(self, x):
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def discard(self, x):
        p = self.pos.pop(x, None)
        if p is None:
            return
        last = self.items.pop()
        if p < len(self.items):
            self.items[p] = last
            self.pos[last] = p

    def __contains__(self, x):
        return x in self.pos

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def draw(self, rng):
        return self.items[int(rng.random() * len(self.items))]


class AssocState:
    """Mutable association state shared by the samplers.

    ``hist[i]`` is Bernoulli ``i``'s measurement history, ``owner[k-1][j-1]``
    the Bernoulli that measurement ``(k, j)`` is assigned to.  Local weights
    and the summary quantities the MCMC moves need are cached per Bernoulli.
    """

    def __init__(self, problem: Problem, cache: WeightCache, theta: Theta | None = None):
        self.problem = problem
        self.cache = cache
        K = problem.K
        n = problem.n_total
        self.hist: list[tuple] = [()] * n
        self.lw = [0.0] * n
        self.r = [0.0] * n
        self.tend = [0] * n
        self.horizon = [0] * n
        self.owner = [[-1] * problem.m[k] for k in range(K)]
        self.r1 = IndexedSet()
        self.rpos = IndexedSet()
        # Bernoullis whose creating hypothesis can still be detected
        self.active: set = set()
        self.by_first = [IndexedSet() for _ in range(K + 2)]
        self.by_last = [IndexedSet() for _ in range(K + 2)]
        self.zkey = 0
        self.log_pi = 0.0
        self._creation_r = {}
        if theta is None:
            theta = theta_hat(problem.m)
        for key in histories(theta):
            if key.history:
                self.set_history(key.bernoulli_index, key.history)

    # -- bookkeeping
    def creation_existence(self, i: int) -> float:
        r = self._creation_r.get(i)
        if r is None:
            r = self.cache.after((self.problem.creator(i),)).existence
            self._creation_r[i] = r
        return r

    def set_history(self, i: int, h: tuple):
        old = self.hist[i]
        if old == h:
            return
        if old:
            self.zkey ^= hash((i, old))
            self.by_first[old[0][0]].discard(i)
            self.by_last[old[-1][0]].discard(i)
            for k, j in old:
                if self.owner[k - 1][j - 1] == i:
                    self.owner[k - 1][j - 1] = -1
        self.log_pi -= self.lw[i]
        self.hist[i] = h
        if h:
            lw, r, tend, self.horizon[i] = self.cache.summary(h)
            self.zkey ^= hash((i, h))
            self.by_first[h[0][0]].add(i)
            self.by_last[h[-1][0]].add(i)
            for k, j in h:
                self.owner[k - 1][j - 1] = i
            if self.creation_existence(i) > 0.0:
                self.active.add(i)
            else:
                self.active.discard(i)
        else:
            lw, r, tend = 0.0, 0.0, 0
            self.horizon[i] = 0
            self.active.discard(i)
        self.lw[i], self.r[i], self.tend[i] = lw, r, tend
        self.log_pi += lw
        if r == 1.0 and len(h) >= 2:
            self.r1.add(i)
        else:
            self.r1.discard(i)
        if r > 0.0:
            self.rpos.add(i)
        else:
            self.rpos.discard(i)

    def t_first(self, i: int) -> int:
        return self.hist[i][0][0]

    def t_last(self, i: int) -> int:
        return self.hist[i][-1][0]

    def count_disjoint(self, i: int) -> int:
        """|{i' non-empty : t_first(i') > t_last(i) or t_last(i') < t_first(i)}|."""
        tl, tf = self.t_last(i), self.t_first(i)
        n = 0
        for t in range(tl + 1, self.problem.K + 1):
            n += len(self.by_first[t])
        for t in range(1, tf):
            n += len(self.by_last[t])
        return n

    def draw_disjoint(self, i: int, rng) -> int:
        total = self.count_disjoint(i)
        u = int(rng.random() * total)
        tl, tf = self.t_last(i), self.t_first(i)
        for t in range(tl + 1, self.problem.K + 1):
            b = self.by_first[t]
            if u < len(b):
                return b.items[u]
            u -= len(b)
        for t in range(1, tf):
            b = self.by_last[t]
            if u < len(b):
                return b.items[u]
            u -= len(b)
        raise RuntimeError("index set changed during draw")

    def recompute_log_pi(self) -> float:
        return math.fsum(self.lw)

    # -- conversions
    def nonempty(self) -> dict:
        return {i: h for i, h in enumerate(self.hist) if h}

    def to_theta(self) -> Theta:
        return theta_from_histories(self.problem.m, self.nonempty())

    def singleton_of(self, k: int, j: int) -> int:
        return self.problem.bernoulli_index(k, j)


# --------------------------------------------------------------------------
# Initialization


def greedy_init(problem: Problem, cache: WeightCache) -> Theta:
    """Scan-by-scan global-nearest-neighbour association.

    At each scan every track that can still be detected competes for the
    measurements inside its gate; the assignment maximizes the total change
    of the association log-probability over feasible pairs (a gated
    measurement is taken even when calling it clutter would score higher),
    and unassigned measurements keep starting their own Bernoulli.
    """
    state = AssocState(problem, cache, theta_hat(problem.m))
    what = {}
    for k in range(2, problem.K + 1):
        off = problem.offsets[k - 1]
        tracks = sorted(i for i in state.active if i < off and state.tend[i] >= k)
        if not tracks or problem.m[k - 1] == 0:
            continue
        mk = problem.m[k - 1]
        gain = np.full((len(tracks), mk), -np.inf)
        for a, i in enumerate(tracks):
            h = state.hist[i]
            base = state.lw[i]
            for j in cache.candidates(h, k):
                if (k, j) not in what:
                    what[(k, j)] = cache.log_weight(((k, j),))
                gain[a, j - 1] = cache.log_weight(h + ((k, j),)) - base - what[(k, j)]
        ok = np.isfinite(gain)
        if not ok.any():
            continue
        # infeasible pairs get a cost above any feasible total, so they are never preferred
        big = 1.0 + np.abs(gain[ok]).sum()
        cost = np.where(ok, -gain, big)
        rows, cols = linear_sum_assignment(cost)
        for a, j0 in zip(rows, cols):
            if ok[a, j0]:
                i = tracks[a]
                state.set_history(state.singleton_of(k, j0 + 1), ())
                state.set_history(i, state.hist[i] + ((k, j0 + 1),))
    return state.to_theta()


# --------------------------------------------------------------------------
# Sample store


@dataclass
class SampleStore:
    """Distinct visited associations with their log-probabilities.

    Associations are identified by an order-independent hash of their
    non-empty histories.  ``visits`` counts how often each was the chain
    state.  Full snapshots are kept for all entries when ``keep_all`` is set,
    and always for the best entry seen.
    """

    m: tuple
    keep_all: bool = False
    entries: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    best_key: int | None = None
    best_log_pi: float = NEG_INF
    best_snapshot: dict | None = None
    n_visits: int = 0

    def record(self, state: AssocState, iteration: int):
        key = state.zkey
        self.n_visits += 1
        e = self.entries.get(key)
        if e is not None:
            e[2] += 1
            return
        lp = state.log_pi
        self.entries[key] = [lp, iteration, 1]
        if self.keep_all:
            self.snapshots[key] = state.nonempty()
        if lp > self.best_log_pi:
            exact = state.recompute_log_pi()
            if exact > self.best_log_pi:
                self.best_key = key
                self.best_log_pi = exact
                self.best_snapshot = state.nonempty()
                self.entries[key][0] = exact

    def __len__(self):
        return len(self.entries)

    def theta(self, key: int) -> Theta:
        snap = self.best_snapshot if key == self.best_key else self.snapshots[key]
        return theta_from_histories(self.m, snap)

    def distribution(self) -> dict:
        """Empirical visit frequencies keyed by Theta (requires ``keep_all``)."""
        return {self.theta(k): e[2] / self.n_visits for k, e in self.entries.items()}

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for key in sorted(self.entries):
            lp, first, cnt = self.entries[key]
            h.update(f"{key}:{lp!r}:{first}:{cnt};".encode())
        return h.hexdigest()


def make_rng(seed) -> random.Random:
    """Sampler RNG: a seeded :class:`random.Random` (fast scalar draws)."""
    return random.Random(seed)
