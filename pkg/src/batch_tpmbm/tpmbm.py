"""Trajectory PMBM recursion for a batch of scans.

Implements the PPP prediction/update for undetected trajectories, Bernoulli
prediction, misdetection and detection updates, new-Bernoulli creation, and
:class:`WeightCache`, which computes and memoizes the final-step local
hypothesis for any measurement-association history.

Detection and survival probabilities are constants, so every inner product
<p, pD> or <p, pS> reduces to the constant itself.  Under the L=1-scan
approximation each mixture component only carries the latest state for the
weight computation; filtered histories are kept alongside for smoothing.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    NEG_INF,
    GaussianMoments,
    LocalHypothesis,
    Measurement,
    PoissonComponent,
    Step,
    TrajectoryComponent,
    logsumexp,
    prune_components,
)
from .models import (
    BirthModel,
    MeasurementModel,
    MotionModel,
    gate_threshold,
    innovation,
    predict_moments,
    update_moments,
)


class InvalidHistoryError(ValueError):
    pass


@dataclass(frozen=True)
class TPMBMConfig:
    """Approximation settings.

    ``existence_threshold`` clamps the existence probability of a newly
    detected Bernoulli to zero; ``birth_threshold``/``end_threshold``
    truncate the pmfs of trajectory start and end times;
    ``poisson_threshold`` prunes undetected-trajectory components.
    """

    gate_prob: float = 0.999
    poisson_threshold: float = 1e-4
    birth_threshold: float = 1e-2
    end_threshold: float = 1e-4
    existence_threshold: float = 1e-2

    @property
    def gate(self) -> float:
        return gate_threshold(self.gate_prob, 2)


class HypothesisKey(NamedTuple):
    bernoulli_index: int
    history: tuple


@dataclass(frozen=True)
class PoissonIntensity:
    components: tuple
    step: int

    @property
    def total_weight(self) -> float:
        return sum(c.weight for c in self.components)


# --------------------------------------------------------------------------
# Undetected trajectories


def ppp_predict(intensity: PoissonIntensity, motion: MotionModel, birth: BirthModel) -> PoissonIntensity:
    k = intensity.step
    log_ps = math.log(motion.ps)
    comps = []
    for c in intensity.components:
        m, P = predict_moments(c.moments.mean, c.moments.cov, motion.F, motion.Q)
        comps.append(PoissonComponent(c.log_weight + log_ps, c.birth, k + 1,
                                      GaussianMoments(m, P), Step(m, P, m, P, c.path)))
    for lw, mom in birth.components:
        comps.append(PoissonComponent(lw, k + 1, k + 1, mom, Step(mom.mean, mom.cov, None, None, None)))
    return PoissonIntensity(tuple(comps), k + 1)


def ppp_update(intensity: PoissonIntensity, pd: float) -> PoissonIntensity:
    if pd >= 1.0:
        return PoissonIntensity(tuple(replace(c, log_weight=NEG_INF) for c in intensity.components),
                                intensity.step)
    log_q = math.log1p(-pd)
    return PoissonIntensity(tuple(replace(c, log_weight=c.log_weight + log_q) for c in intensity.components),
                            intensity.step)


def prune_poisson(intensity: PoissonIntensity, threshold: float) -> PoissonIntensity:
    if threshold <= 0:
        return intensity
    log_thr = math.log(threshold)
    return PoissonIntensity(tuple(c for c in intensity.components if c.log_weight >= log_thr), intensity.step)


# --------------------------------------------------------------------------
# Bernoulli components


def _needs_pruning(comps, threshold: float, attr: str) -> bool:
    marg: dict = {}
    for c in comps:
        t = getattr(c, attr)
        marg[t] = marg.get(t, 0.0) + math.exp(c.log_weight)
    total = sum(marg.values())
    return any(v < threshold * total for v in marg.values())


def _truncate(comps, cfg: TPMBMConfig):
    """Birth- then end-time pmf truncation (mixtures arrive normalized)."""
    if len(comps) > 1 and _needs_pruning(comps, cfg.birth_threshold, "birth"):
        comps = prune_components(comps, cfg.birth_threshold, by="birth")
    if len(comps) > 1 and _needs_pruning(comps, cfg.end_threshold, "end"):
        comps = prune_components(comps, cfg.end_threshold, by="end")
    return tuple(comps)


def bernoulli_predict(h: LocalHypothesis, motion: MotionModel, propagate: bool = True,
                      cfg: TPMBMConfig = TPMBMConfig()) -> LocalHypothesis:
    """Each alive component splits into an ended copy and a continuing copy.

    With ``propagate=False`` the continuing copy's moments are not computed;
    use this once no further detection can follow.
    """
    k = h.step
    if h.existence == 0.0 or not h.is_possible:
        return replace(h, step=k + 1)
    log_ps = math.log(motion.ps)
    log_end = math.log1p(-motion.ps) if motion.ps < 1.0 else NEG_INF
    comps = []
    any_alive = False
    for c in h.components:
        if c.end != k:
            comps.append(c)
            continue
        any_alive = True
        if log_end > NEG_INF:
            comps.append(TrajectoryComponent(c.log_weight + log_end, c.birth, k, c.mean, c.cov, c.path))
        if propagate and c.mean is not None:
            m, P = predict_moments(c.mean, c.cov, motion.F, motion.Q)
            comps.append(TrajectoryComponent(c.log_weight + log_ps, c.birth, k + 1, m, P, Step(m, P, m, P, c.path)))
        else:
            comps.append(TrajectoryComponent(c.log_weight + log_ps, c.birth, k + 1, None, None, None))
    if not any_alive:
        return replace(h, step=k + 1)
    return LocalHypothesis(h.existence, _truncate(comps, cfg), h.log_weight, h.history, k + 1)


def bernoulli_misdetect(h: LocalHypothesis, pd: float, step: int | None = None,
                        cfg: TPMBMConfig = TPMBMConfig()) -> LocalHypothesis:
    k = h.step if step is None else step
    r = h.existence
    if r == 0.0 or not h.is_possible:
        return h
    alive = sum(math.exp(c.log_weight) for c in h.components if c.end == k)
    if alive == 0.0:
        return h
    phi0 = pd * alive
    denom = 1.0 - r * phi0
    if denom <= 0.0:
        return LocalHypothesis.impossible(h.history, k)
    log_w = h.log_weight + math.log(denom)
    miss = 1.0 - phi0
    if miss <= 0.0:
        return LocalHypothesis(0.0, (), log_w, h.history, k)
    log_miss = math.log(miss)
    log_q = math.log1p(-pd) if pd < 1.0 else NEG_INF
    comps = []
    for c in h.components:
        if c.end == k:
            if log_q > NEG_INF:
                comps.append(c.with_weight(c.log_weight + log_q - log_miss))
        else:
            comps.append(c.with_weight(c.log_weight - log_miss))
    return LocalHypothesis(r * miss / denom, _truncate(comps, cfg), log_w, h.history, k)


def bernoulli_detect(h: LocalHypothesis, z: Measurement, meas: MeasurementModel,
                     cfg: TPMBMConfig = TPMBMConfig()) -> LocalHypothesis:
    k = h.step
    history = h.history + (z.key,)
    if z.time != k:
        raise ValueError(f"measurement at time {z.time} applied at step {k}")
    if h.existence == 0.0 or not h.is_possible:
        return LocalHypothesis.impossible(history, k)
    thr = cfg.gate
    terms = []
    for c in h.components:
        if c.end != k:
            continue
        if c.mean is None:
            raise RuntimeError("component moments were not propagated")
        m, P, ll, d2 = update_moments(c.mean, c.cov, z.value, meas.H, meas.R)
        if d2 > thr:
            continue
        terms.append((c, m, P, c.log_weight + ll))
    if not terms:
        return LocalHypothesis.impossible(history, k)
    log_pd = math.log(meas.pd)
    log_sum = logsumexp(t[3] for t in terms)
    comps = []
    for c, m, P, lw in terms:
        node = c.path
        path = Step(m, P, node.pred_mean, node.pred_cov, node.prev) if node is not None else None
        comps.append(TrajectoryComponent(lw - log_sum, c.birth, k, m, P, path))
    log_w = h.log_weight + math.log(h.existence) + log_pd + log_sum
    return LocalHypothesis(1.0, _truncate(comps, cfg), log_w, history, k)


def new_bernoulli(z: Measurement, intensity: PoissonIntensity, meas: MeasurementModel,
                  cfg: TPMBMConfig = TPMBMConfig()) -> tuple[LocalHypothesis, LocalHypothesis]:
    """The two local hypotheses of the Bernoulli created by ``z``.

    Returns ``(exists, null)``: the first explains ``z`` as clutter or the
    first detection of an undetected trajectory, the second assigns ``z``
    elsewhere (weight 1, existence 0).
    """
    k = intensity.step
    if z.time != k:
        raise ValueError(f"measurement at time {z.time} but intensity at step {k}")
    thr = cfg.gate
    terms = []
    for c in intensity.components:
        if c.log_weight == NEG_INF:
            continue
        m, P, ll, d2 = update_moments(c.moments.mean, c.moments.cov, z.value, meas.H, meas.R)
        if d2 > thr:
            continue
        terms.append((c, m, P, c.log_weight + ll))
    lam_c = meas.clutter_intensity(z.value)
    log_c = math.log(lam_c) if lam_c > 0 else NEG_INF
    log_phi = math.log(meas.pd) + logsumexp(t[3] for t in terms) if terms else NEG_INF
    log_w = np.logaddexp(log_c, log_phi) if (log_c > NEG_INF or log_phi > NEG_INF) else NEG_INF
    null = LocalHypothesis.null(k)
    if log_w == NEG_INF:
        return LocalHypothesis.impossible((z.key,), k), null
    log_w = float(log_w)
    r = math.exp(log_phi - log_w) if log_phi > NEG_INF else 0.0
    if r < cfg.existence_threshold:
        return LocalHypothesis(0.0, (), log_w, (z.key,), k), null
    log_sum = log_phi - math.log(meas.pd)
    comps = []
    for c, m, P, lw in terms:
        node = c.path
        path = Step(m, P, node.pred_mean, node.pred_cov, node.prev) if node is not None else None
        comps.append(TrajectoryComponent(lw - log_sum, c.birth, k, m, P, path))
    return LocalHypothesis(min(r, 1.0), _truncate(comps, cfg), log_w, (z.key,), k), null


# --------------------------------------------------------------------------
# Batch problem and memoized local weights


class Problem:
    """A batch of scans together with the models and approximation settings.

    ``scans[k-1]`` is an ``(m_k, 2)`` array of positions.  Bernoulli
    components are numbered from 0 in (time, index) order, so the Bernoulli
    created by measurement ``(k, j)`` has index ``offsets[k-1] + j - 1``.
    """

    def __init__(self, scans: Sequence[np.ndarray], motion: MotionModel, meas: MeasurementModel,
                 birth: BirthModel, config: TPMBMConfig = TPMBMConfig()):
        self.scans = [np.asarray(z, dtype=float).reshape(-1, 2) for z in scans]
        self.K = len(self.scans)
        self.m = [len(z) for z in self.scans]
        self.offsets = [0]
        for mk in self.m:
            self.offsets.append(self.offsets[-1] + mk)
        self.n_total = self.offsets[-1]
        self.motion = motion
        self.meas = meas
        self.birth = birth
        self.config = config
        self._creators = [(k, j) for k in range(1, self.K + 1) for j in range(1, self.m[k - 1] + 1)]
        self.predicted_ppp: list[PoissonIntensity] = []
        self.updated_ppp: list[PoissonIntensity] = []
        lam = PoissonIntensity((), 0)
        for _ in range(self.K):
            lam = ppp_predict(lam, motion, birth)
            self.predicted_ppp.append(lam)
            lam = prune_poisson(ppp_update(lam, meas.pd), config.poisson_threshold)
            self.updated_ppp.append(lam)

    def measurement(self, k: int, j: int) -> Measurement:
        return Measurement(k, j, self.scans[k - 1][j - 1])

    def bernoulli_index(self, k: int, j: int) -> int:
        return self.offsets[k - 1] + j - 1

    def creator(self, i: int) -> tuple[int, int]:
        return self._creators[i]

    def n_existing(self, k: int) -> int:
        """Number of Bernoulli components before the scan-k update."""
        return self.offsets[k - 1]

    def validate_history(self, history: tuple, bernoulli_index: int | None = None):
        prev = 0
        for k, j in history:
            if k <= prev:
                raise InvalidHistoryError(f"history times must increase strictly: {history}")
            if not (1 <= k <= self.K and 1 <= j <= self.m[k - 1]):
                raise InvalidHistoryError(f"no measurement ({k}, {j})")
            prev = k
        if bernoulli_index is not None and history and self.creator(bernoulli_index) != history[0]:
            raise InvalidHistoryError(
                f"Bernoulli {bernoulli_index} is created by {self.creator(bernoulli_index)}, not {history[0]}")


class _LRU:
    def __init__(self, capacity: int | None):
        self.capacity = capacity
        self.data: dict = OrderedDict() if capacity else {}

    def get(self, key):
        v = self.data.get(key)
        if v is not None and self.capacity:
            self.data.move_to_end(key)
        return v

    def put(self, key, value):
        self.data[key] = value
        if self.capacity and len(self.data) > self.capacity:
            self.data.popitem(last=False)

    def __len__(self):
        return len(self.data)


class WeightCache:
    """Memoized final-step local hypotheses keyed by association history.

    States right after each detection are cached by history prefix, so a
    history that shares a prefix with one seen before only recomputes the
    suffix.  Results do not depend on cache state.
    """

    def __init__(self, problem: Problem, capacity: int | None = None, prefix_capacity: int | None = None):
        self.problem = problem
        self._final = _LRU(capacity)
        self._prefix = _LRU(prefix_capacity)
        self._cands = _LRU(prefix_capacity)
        self._summary = _LRU(capacity)
        self._tail: dict = {}
        self.hits = 0
        self.misses = 0

    # -- recursion helpers
    def _advance_to(self, h: LocalHypothesis, k: int, propagate: bool) -> LocalHypothesis:
        """Predict/misdetect from ``h.step`` up to a *predicted* state at step ``k``."""
        p = self.problem
        cfg = p.config
        while h.step < k:
            if h.existence == 0.0 or not h.is_possible or h.max_end < h.step:
                return replace(h, step=k)
            h = bernoulli_predict(h, p.motion, propagate, cfg)
            if h.step < k:
                h = bernoulli_misdetect(h, p.meas.pd, cfg=cfg)
        return h

    def after(self, prefix: tuple) -> LocalHypothesis:
        """State right after the update with the last pair of ``prefix``."""
        got = self._prefix.get(prefix)
        if got is not None:
            return got
        p = self.problem
        n = len(prefix) - 1
        while n > 0 and self._prefix.get(prefix[:n]) is None:
            n -= 1
        if n == 0:
            k, j = prefix[0]
            h, _ = new_bernoulli(p.measurement(k, j), p.predicted_ppp[k - 1], p.meas, p.config)
            self._prefix.put(prefix[:1], h)
            n = 1
        else:
            h = self._prefix.get(prefix[:n])
        for idx in range(n, len(prefix)):
            k, j = prefix[idx]
            if h.is_possible:
                h = self._advance_to(h, k, True)
                h = bernoulli_detect(h, p.measurement(k, j), p.meas, p.config)
            else:
                h = LocalHypothesis.impossible(prefix[: idx + 1], k)
            self._prefix.put(prefix[: idx + 1], h)
        return h

    def _finish(self, h: LocalHypothesis, propagate: bool) -> tuple[LocalHypothesis, int]:
        """Run misdetections through step K.

        Also returns the horizon: the last step whose predicted state still
        has alive mass (no detection can be associated after it).
        """
        p = self.problem
        cfg = p.config
        horizon = h.step
        if not h.is_possible:
            return replace(h, step=p.K), horizon
        while h.step < p.K:
            if h.existence == 0.0 or h.max_end < h.step:
                return replace(h, step=p.K), horizon
            h = bernoulli_predict(h, p.motion, propagate, cfg)
            if h.existence > 0.0 and h.max_end == h.step:
                horizon = h.step
            h = bernoulli_misdetect(h, p.meas.pd, cfg=cfg)
            if not h.is_possible:
                return replace(h, step=p.K), horizon
        return h, horizon

    def hypothesis(self, history: tuple) -> LocalHypothesis:
        """Final-step (time K) local hypothesis for ``history`` (weight mode)."""
        history = tuple(history)
        got = self._final.get(history)
        if got is not None:
            self.hits += 1
            return got[0]
        return self._compute(history)[0]

    def _compute(self, history: tuple):
        self.misses += 1
        if not history:
            entry = (LocalHypothesis.null(self.problem.K), 0)
        else:
            entry = self._finish(self.after(history), propagate=False)
        self._final.put(history, entry)
        return entry

    def _tail_after(self, t: int) -> tuple[float, int, int]:
        """Misdetection tail from a certainly-existing, all-alive state at step ``t``.

        Once a Bernoulli has been detected its existence is 1 and every
        component is alive; prediction and misdetection act on all components
        alike and leave the birth-time pmf unchanged, so the rest of the
        recursion only depends on ``t``.  Returns the log-weight increment,
        the latest end time and the horizon.
        """
        got = self._tail.get(t)
        if got is None:
            h = LocalHypothesis(1.0, (TrajectoryComponent(0.0, t, t, None, None),), 0.0, (), t)
            fin, horizon = self._finish(h, propagate=False)
            got = (fin.log_weight, fin.max_end, horizon)
            self._tail[t] = got
        return got

    def summary(self, history: tuple) -> tuple[float, float, int, int]:
        """``(log_weight, existence, latest end time, horizon)`` of the final hypothesis.

        The horizon is the last scan at which a detection could still be
        associated after ``history``.
        """
        got = self._summary.get(history)
        if got is not None:
            self.hits += 1
            return got
        if len(history) < 2:
            h = self.hypothesis(history)
            entry = self._final.get(history)
            got = (h.log_weight, h.existence, h.max_end, entry[1] if entry else 0)
        else:
            self.misses += 1
            h = self.after(history)
            if not h.is_possible:
                got = (NEG_INF, 0.0, 0, history[-1][0])
            else:
                lw, tend, horizon = self._tail_after(history[-1][0])
                got = (h.log_weight + lw, h.existence, tend, horizon)
        self._summary.put(history, got)
        return got

    def log_weight(self, history: tuple) -> float:
        if not history:
            return 0.0
        return self.summary(history)[0]

    def horizon(self, history: tuple) -> int:
        """Last scan at which a detection could still follow ``history``."""
        return self.summary(tuple(history))[3]

    def full_hypothesis(self, history: tuple) -> LocalHypothesis:
        """Final-step hypothesis with moments and filtered paths for every component."""
        history = tuple(history)
        if not history:
            return LocalHypothesis.null(self.problem.K)
        return self._finish(self.after(history), propagate=True)[0]

    def predicted_at(self, prefix: tuple, k: int) -> LocalHypothesis:
        """Predicted hypothesis at step ``k`` given detections ``prefix`` (all before ``k``)."""
        return self._advance_to(self.after(prefix), k, True)

    def candidates(self, prefix: tuple, k: int) -> tuple:
        """Measurement indices at scan ``k`` inside the gate of some alive component."""
        key = (prefix, k)
        got = self._cands.get(key)
        if got is not None:
            return got
        p = self.problem
        out: tuple = ()
        if prefix and p.m[k - 1]:
            h = self.predicted_at(prefix, k)
            if h.is_possible and h.existence > 0.0:
                mask = np.zeros(p.m[k - 1], dtype=bool)
                Z = p.scans[k - 1]
                for c in h.components:
                    if c.end == k:
                        zhat, _, Sinv, _ = innovation(c.mean, c.cov, p.meas.H, p.meas.R)
                        nu = Z - zhat
                        mask |= np.einsum("ni,ij,nj->n", nu, Sinv, nu) <= p.config.gate
                out = tuple(int(j) + 1 for j in np.flatnonzero(mask))
        self._cands.put(key, out)
        return out

    def single_detection_weights(self) -> dict:
        p = self.problem
        return {(k, j): self.log_weight(((k, j),))
                for k in range(1, p.K + 1) for j in range(1, p.m[k - 1] + 1)}


def local_weight(key: HypothesisKey, cache: WeightCache) -> LocalHypothesis:
    """Validated entry point: final-step local hypothesis for ``key``."""
    cache.problem.validate_history(key.history, key.bernoulli_index)
    return cache.hypothesis(key.history)
