"""Scenario and measurement simulation.

The preset scenario has six objects born in pairs at scans 1, 11 and 21 that
head towards the origin, pass close to each other around scan 41 and spread
out again before dying at scans 61, 71 and 81.  Process noise makes the
meeting point random, so the preset ships a seed whose sampled ground truth
actually brings all six objects close together.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Trajectory
from .models import BirthModel, MeasurementModel, MotionModel, constant_velocity, position_sensor

SCHEMA_VERSION = 1
CLUTTER = -1


@dataclass
class Scenario:
    """Object birth/death times and model parameters.

    ``births`` holds ``(birth time, state)`` per object.  The state is the
    birth state, or, when ``anchor_time`` is set, the state at
    ``anchor_time``, from which the motion model is run both forwards and
    backwards.
    """

    K: int
    births: list
    deaths: list
    region: tuple = ((-200.0, 200.0), (-200.0, 200.0))
    Ts: float = 1.0
    q: float = 0.09
    ps: float = 0.98
    pd: float = 0.7
    clutter_rate: float = 30.0
    r: float = 1.0
    birth_weight: float = 0.01
    birth_cov: float = 4.0
    seed: int = 0
    anchor_time: int | None = None

    def __post_init__(self):
        self.births = [(int(t), [float(v) for v in x]) for t, x in self.births]
        self.deaths = [int(t) for t in self.deaths]
        self.region = tuple(tuple(float(v) for v in ax) for ax in self.region)
        if len(self.births) != len(self.deaths):
            raise ValueError("one death time per object required")
        for (tb, x), td in zip(self.births, self.deaths):
            if td < tb:
                raise ValueError("death before birth")
            if not (1 <= tb <= self.K):
                raise ValueError("birth outside the horizon")
            if self.anchor_time is not None and not tb <= self.anchor_time <= td:
                raise ValueError("anchor time outside an object's lifetime")
            (x0, x1), (y0, y1) = self.region
            if not (x0 <= x[0] <= x1 and y0 <= x[2] <= y1):
                raise ValueError("object state outside the region")

    @property
    def n_objects(self) -> int:
        return len(self.births)

    def motion(self) -> MotionModel:
        return constant_velocity(self.Ts, self.q, self.ps)

    def measurement_model(self) -> MeasurementModel:
        return position_sensor(self.pd, self.clutter_rate, self.r, self.region)

    def birth_model(self, truth=None) -> BirthModel:
        """Birth prior centred on the true birth states rounded to integers.

        Anchored scenarios only know their birth states once the ground truth
        has been sampled, so ``truth`` is required for them.
        """
        if truth is not None:
            means = [np.round(t.states[0]) for t in truth]
        elif self.anchor_time is None:
            means = [np.round(np.asarray(x)) for _, x in self.births]
        else:
            raise ValueError("anchored scenario: pass the sampled ground truth")
        cov = self.birth_cov * np.eye(4)
        if not means:
            means = [np.zeros(4)]
        return BirthModel.from_means(means, self.birth_weight, cov)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d.pop("schema_version", None)
        return cls(**d)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class LabelledMeasurementBatch:
    """Per-scan ``(m_k, 2)`` measurements with origin labels (object id or -1)."""

    scans: list
    origins: list
    truth: list = field(default_factory=list)

    def __post_init__(self):
        self.scans = [np.asarray(z, dtype=float).reshape(-1, 2) for z in self.scans]
        self.origins = [[int(o) for o in org] for org in self.origins]
        if len(self.scans) != len(self.origins) or any(len(z) != len(o) for z, o in zip(self.scans, self.origins)):
            raise ValueError("origin labels do not align with measurements")

    @property
    def K(self) -> int:
        return len(self.scans)

    def origin_of(self, obj: int) -> dict:
        """``{scan: measurement index}`` of the detections of object ``obj``."""
        out = {}
        for k, org in enumerate(self.origins, start=1):
            for j, o in enumerate(org, start=1):
                if o == obj:
                    out[k] = j
        return out

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "K": self.K,
                "scans": [z.tolist() for z in self.scans], "origins": self.origins,
                "truth": truth_to_list(self.truth)}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelledMeasurementBatch":
        return cls(d["scans"], d["origins"], truth_from_list(d.get("truth", [])))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "LabelledMeasurementBatch":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def truth_to_list(truth) -> list:
    return [{"id": t.id, "birth": t.birth, "states": np.asarray(t.states).tolist()} for t in truth]


def truth_from_list(items) -> list:
    return [Trajectory(d["birth"], np.asarray(d["states"], dtype=float).reshape(-1, 4), id=d.get("id", n))
            for n, d in enumerate(items)]


def run_rng(root_seed: int, run: int) -> np.random.Generator:
    """Independent stream for Monte Carlo run ``run`` under ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(run,)))


def generate_truth(scenario: Scenario, rng: np.random.Generator) -> list[Trajectory]:
    """Sample x_{k+1} ~ N(F x_k, Q) over each object's lifetime.

    For anchored scenarios the same transition density is also run backwards
    from the anchor state, x_{k-1} = F^{-1}(x_k - w), w ~ N(0, Q).
    """
    motion = scenario.motion()
    L = np.linalg.cholesky(motion.Q) if np.any(motion.Q) else np.zeros_like(motion.Q)
    Finv = np.linalg.inv(motion.F)
    out = []
    for n, ((tb, x0), td) in enumerate(zip(scenario.births, scenario.deaths)):
        ta = tb if scenario.anchor_time is None else scenario.anchor_time
        x = np.asarray(x0, dtype=float)
        states = [x]
        for _ in range(td - ta):
            x = motion.F @ x + L @ rng.standard_normal(4)
            states.append(x)
        x = np.asarray(x0, dtype=float)
        before = []
        for _ in range(ta - tb):
            x = Finv @ (x - L @ rng.standard_normal(4))
            before.append(x)
        out.append(Trajectory(tb, np.array(before[::-1] + states), id=n))
    return out


def generate_measurements(truth, meas: MeasurementModel, K: int, rng: np.random.Generator) -> LabelledMeasurementBatch:
    L = np.linalg.cholesky(meas.R) if np.any(meas.R) else np.zeros_like(meas.R)
    (x0, x1), (y0, y1) = meas.region
    scans, origins = [], []
    for k in range(1, K + 1):
        zs, org = [], []
        for t in truth:
            if t.alive(k) and rng.random() < meas.pd:
                zs.append(meas.H @ t.states[k - t.birth] + L @ rng.standard_normal(2))
                org.append(t.id)
        nc = rng.poisson(meas.clutter_rate) if meas.clutter_rate > 0 else 0
        if nc:
            zs.extend(np.column_stack([rng.uniform(x0, x1, nc), rng.uniform(y0, y1, nc)]))
            org.extend([CLUTTER] * nc)
        perm = rng.permutation(len(zs))
        scans.append(np.array([zs[p] for p in perm]).reshape(-1, 2))
        origins.append([org[p] for p in perm])
    return LabelledMeasurementBatch(scans, origins, list(truth))


def simulate(scenario: Scenario, run: int | None = None) -> LabelledMeasurementBatch:
    """Ground truth from the scenario seed; measurements from the run's stream."""
    truth = generate_truth(scenario, np.random.default_rng(scenario.seed))
    rng = run_rng(scenario.seed, 0 if run is None else run + 1)
    return generate_measurements(truth, scenario.measurement_model(), scenario.K, rng)


# --------------------------------------------------------------------------
# Preset


PRESET_SEED = 2  # first seed passing ``proximity_ok`` (see ``find_seed``)


def _crossing_births(speed: float = 3.0):
    """Anchor states: all objects at the origin, heading out radially."""
    times = [1, 1, 11, 11, 21, 21]
    angles = [90.0, 270.0, 30.0, 210.0, 150.0, 330.0]
    births = []
    for t, a in zip(times, angles):
        u = np.array([math.cos(math.radians(a)), math.sin(math.radians(a))])
        births.append((t, [0.0, speed * u[0], 0.0, speed * u[1]]))
    return births


def close_pairs(truth, dist: float = 5.0) -> int:
    """Number of object pairs that come within ``dist`` of each other."""
    n = 0
    for a, b in itertools.combinations(truth, 2):
        lo, hi = max(a.birth, b.birth), min(a.end, b.end)
        if lo > hi:
            continue
        pa = a.states[lo - a.birth:hi - a.birth + 1][:, [0, 2]]
        pb = b.states[lo - b.birth:hi - b.birth + 1][:, [0, 2]]
        n += bool(np.min(np.linalg.norm(pa - pb, axis=1)) < dist)
    return n


def proximity_ok(truth, radius: float = 20.0, scans=range(31, 52), region=((-200.0, 200.0), (-200.0, 200.0)),
                 margin: float = 10.0, min_close_pairs: int = 6, close_dist: float = 5.0) -> bool:
    """Acceptance check for the preset ground truth.

    All objects must fit in a disc of diameter ``2 * radius`` (centred on
    their centroid) at some scan in ``scans``, at least ``min_close_pairs``
    object pairs must pass within ``close_dist`` of each other, and every
    state must stay ``margin`` inside the region.
    """
    (x0, x1), (y0, y1) = region
    for t in truth:
        px, py = t.states[:, 0], t.states[:, 2]
        if px.min() < x0 + margin or px.max() > x1 - margin or py.min() < y0 + margin or py.max() > y1 - margin:
            return False
    met = False
    for k in scans:
        pos = [t.position(k) for t in truth if t.alive(k)]
        if len(pos) != len(truth):
            continue
        P = np.array(pos)
        if np.all(np.linalg.norm(P - P.mean(axis=0), axis=1) <= radius):
            met = True
            break
    return met and close_pairs(truth, close_dist) >= min_close_pairs


def paper_scenario(seed: int | None = None) -> Scenario:
    return Scenario(K=81, births=_crossing_births(), deaths=[61, 61, 71, 71, 81, 81],
                    seed=PRESET_SEED if seed is None else seed, anchor_time=41)


def find_seed(start: int = 0, limit: int = 100000, **check) -> int:
    """First seed at or after ``start`` whose preset truth passes :func:`proximity_ok`."""
    for s in range(start, start + limit):
        sc = paper_scenario(s)
        if proximity_ok(generate_truth(sc, np.random.default_rng(s)), **check):
            return s
    raise RuntimeError("no seed found")
