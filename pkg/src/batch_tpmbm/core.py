"""Shared value types: measurements, Gaussian moments, trajectory mixtures and
Bernoulli local hypotheses, plus log-domain mixture maintenance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

NEG_INF = -math.inf


class DegenerateMixtureError(ValueError):
    pass


@dataclass(frozen=True)
class Measurement:
    """Position measurement ``index`` (1-based) of scan ``time`` (1-based)."""

    time: int
    index: int
    value: np.ndarray

    @property
    def key(self) -> tuple[int, int]:
        return (self.time, self.index)


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


class Step(NamedTuple):
    """One node of a persistent (shared-tail) list of per-step moments.

    ``pred_mean``/``pred_cov`` hold the one-step prediction into this step from
    the previous node, ``None`` at the birth step.
    """

    mean: np.ndarray
    cov: np.ndarray
    pred_mean: np.ndarray | None
    pred_cov: np.ndarray | None
    prev: "Step | None"


def _unroll(node: Step | None) -> list[Step]:
    out = []
    while node is not None:
        out.append(node)
        node = node.prev
    out.reverse()
    return out


class TrajectoryComponent:
    """One (birth, end) atom of a single-trajectory mixture.

    ``mean``/``cov`` are the moments at the end step.  The filtered history is
    kept as a persistent linked list so that splitting a component into a
    dead and an alive copy shares storage.  When a recursion runs in
    weight-only mode the moments of components that can no longer be
    detected are not propagated; such components have ``mean is None``.
    """

    __slots__ = ("log_weight", "birth", "end", "mean", "cov", "path")

    def __init__(self, log_weight, birth, end, mean, cov, path=None):
        self.log_weight = log_weight
        self.birth = birth
        self.end = end
        self.mean = mean
        self.cov = cov
        self.path = path

    def with_weight(self, log_weight: float) -> "TrajectoryComponent":
        return TrajectoryComponent(log_weight, self.birth, self.end, self.mean, self.cov, self.path)

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)

    @property
    def marginals(self) -> list[GaussianMoments]:
        """Filtered marginals for steps birth..end."""
        return [GaussianMoments(s.mean, s.cov) for s in _unroll(self.path)]

    @property
    def predicted(self) -> list[GaussianMoments]:
        """One-step predictions into steps birth+1..end."""
        return [GaussianMoments(s.pred_mean, s.pred_cov) for s in _unroll(self.path)[1:]]

    def __repr__(self):
        return f"TrajectoryComponent(w={self.weight:.4g}, b={self.birth}, e={self.end})"


@dataclass(frozen=True)
class LocalHypothesis:
    """Bernoulli local hypothesis at recursion step ``step``.

    ``history`` is the ordered tuple of ``(time, index)`` measurement pairs.
    A hypothesis with ``log_weight == -inf`` encodes an impossible association.
    """

    existence: float
    components: tuple
    log_weight: float
    history: tuple
    step: int = 0

    @classmethod
    def null(cls, step: int = 0) -> "LocalHypothesis":
        return cls(0.0, (), 0.0, (), step)

    @classmethod
    def impossible(cls, history: tuple, step: int = 0) -> "LocalHypothesis":
        return cls(0.0, (), NEG_INF, tuple(history), step)

    @property
    def is_possible(self) -> bool:
        return self.log_weight > NEG_INF

    @property
    def alive_components(self) -> list[TrajectoryComponent]:
        return [c for c in self.components if c.end == self.step]

    @property
    def alive_mass(self) -> float:
        return sum(c.weight for c in self.components if c.end == self.step)

    @property
    def max_end(self) -> int:
        """Latest end time in the mixture (0 for an empty mixture)."""
        return max((c.end for c in self.components), default=0)

    def time_pmf(self) -> dict[tuple[int, int], float]:
        """Joint pmf of (birth, end) carried by the mixture."""
        pmf: dict[tuple[int, int], float] = {}
        for c in self.components:
            key = (c.birth, c.end)
            pmf[key] = pmf.get(key, 0.0) + c.weight
        return pmf


@dataclass(frozen=True)
class PoissonComponent:
    log_weight: float
    birth: int
    end: int
    moments: GaussianMoments
    path: Step | None = field(default=None, compare=False, repr=False)

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


def logsumexp(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        return NEG_INF
    top = max(vals)
    if top == NEG_INF:
        return NEG_INF
    if top == math.inf:
        return math.inf
    return top + math.log(sum(math.exp(v - top) for v in vals))


def normalize_log_weights(weights: Sequence[float]) -> tuple[list[float], float]:
    """Normalize log-weights.

    Returns the linear-domain normalized weights and the log of their total.

    >>> normalize_log_weights([0.0, 0.0])[0]
    [0.5, 0.5]
    """
    if len(weights) == 0:
        raise DegenerateMixtureError("degenerate mixture: no weights")
    total = logsumexp(weights)
    if total == NEG_INF or math.isnan(total):
        raise DegenerateMixtureError("degenerate mixture")
    return [math.exp(w - total) for w in weights], total


def prune_components(components: Sequence[TrajectoryComponent], threshold: float,
                     by: str | None = None) -> list[TrajectoryComponent]:
    """Drop mixture mass below ``threshold`` and renormalize.

    With ``by=None`` each component is judged on its own weight.  With
    ``by="birth"`` or ``by="end"`` the marginal pmf of the birth (or end) time
    is truncated instead, removing every component whose time carries less
    than ``threshold`` probability.  The boundary is inclusive: a component
    at exactly ``threshold`` is kept.
    """
    if threshold >= 1:
        raise ValueError("pruning threshold must be < 1")
    if not components:
        return []
    probs, _ = normalize_log_weights([c.log_weight for c in components])
    if by is None:
        keep = [p >= threshold for p in probs]
    else:
        attr = {"birth": "birth", "end": "end"}[by]
        marg: dict[int, float] = {}
        for c, p in zip(components, probs):
            t = getattr(c, attr)
            marg[t] = marg.get(t, 0.0) + p
        keep = [marg[getattr(c, attr)] >= threshold for c in components]
    if all(keep):
        return [c.with_weight(math.log(p)) if p > 0 else c.with_weight(NEG_INF)
                for c, p in zip(components, probs)]
    kept = [(c, p) for c, p, k in zip(components, probs, keep) if k]
    total = sum(p for _, p in kept)
    return [c.with_weight(math.log(p / total)) for c, p in kept]


@dataclass
class Trajectory:
    """State sequence for steps ``birth..end``.

    ``states`` is ``(end - birth + 1, 4)`` in (px, vx, py, vy) order;
    ``covs`` optionally holds the matching covariances and ``history`` the
    associated measurement pairs for estimated trajectories.
    """

    birth: int
    states: np.ndarray
    covs: np.ndarray | None = None
    id: int = 0
    history: tuple = ()

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))

    @property
    def end(self) -> int:
        return self.birth + len(self.states) - 1

    def alive(self, k: int) -> bool:
        return self.birth <= k <= self.end

    def position(self, k: int) -> np.ndarray:
        return self.states[k - self.birth][[0, 2]]
