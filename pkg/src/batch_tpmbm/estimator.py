"""Set-of-trajectories estimate from sampled data associations."""

from __future__ import annotations

import csv
import json

import numpy as np

from .assoc import SampleStore, Theta, histories
from .core import Trajectory
from .models import rts_smooth
from .tpmbm import WeightCache

SCHEMA_VERSION = 1

TrajectoryEstimate = Trajectory


class EmptyStoreError(ValueError):
    pass


def map_hypothesis(store: SampleStore) -> Theta:
    """Highest-probability association visited (earliest visit wins ties)."""
    if store.best_key is None:
        raise EmptyStoreError("sample store is empty")
    return store.theta(store.best_key)


def map_component(hyp):
    """Highest-probability (birth, end) atom and its heaviest component.

    Ties on the (birth, end) probability go to the earliest birth, then the
    latest end.
    """
    pmf = hyp.time_pmf()
    best = max(pmf.items(), key=lambda kv: (kv[1], -kv[0][0], kv[0][1]))[0]
    comps = [c for c in hyp.components if (c.birth, c.end) == best]
    return best, max(comps, key=lambda c: c.log_weight)


def estimate_track(history: tuple, cache: WeightCache, smooth: bool = True, track_id: int = 0):
    """Trajectory estimate for one detected Bernoulli (None unless r = 1)."""
    hyp = cache.full_hypothesis(history)
    if not hyp.is_possible or hyp.existence < 1.0:
        return None
    (birth, end), comp = map_component(hyp)
    filtered = comp.marginals
    if smooth and len(filtered) > 1:
        moments = rts_smooth(filtered, comp.predicted, cache.problem.motion)
    else:
        moments = filtered
    return Trajectory(birth, np.array([m.mean for m in moments]), np.array([m.cov for m in moments]),
                      id=track_id, history=tuple(history))


def extract(theta: Theta, cache: WeightCache, smooth: bool = True) -> list[Trajectory]:
    """One smoothed estimate per Bernoulli with existence probability 1."""
    out = []
    for key in histories(theta):
        if len(key.history) < 2:
            continue
        est = estimate_track(key.history, cache, smooth, key.bernoulli_index)
        if est is not None:
            out.append(est)
    return out


def extract_from_histories(hists, cache: WeightCache, smooth: bool = True) -> list[Trajectory]:
    out = []
    for i, h in sorted(dict(hists).items()):
        if len(h) >= 2:
            est = estimate_track(h, cache, smooth, i)
            if est is not None:
                out.append(est)
    return out


# --------------------------------------------------------------------------
# Writers


def write_csv(estimates, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["schema_version", "id", "birth", "end", "time", "px", "py", "vx", "vy"])
        for e in estimates:
            for n, x in enumerate(e.states):
                w.writerow([SCHEMA_VERSION, e.id, e.birth, e.end, e.birth + n, x[0], x[2], x[1], x[3]])


def read_csv(path) -> list[Trajectory]:
    rows: dict = {}
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.setdefault(int(r["id"]), []).append(r)
    out = []
    for tid, rs in rows.items():
        rs.sort(key=lambda r: int(r["time"]))
        states = [[float(r["px"]), float(r["vx"]), float(r["py"]), float(r["vy"])] for r in rs]
        out.append(Trajectory(int(rs[0]["birth"]), np.array(states), id=tid))
    return out


def to_json(estimates) -> dict:
    return {"schema_version": SCHEMA_VERSION,
            "trajectories": [{"id": e.id, "birth": e.birth, "end": e.end,
                              "history": [list(p) for p in e.history],
                              "states": [{"time": e.birth + n, "px": x[0], "py": x[2], "vx": x[1], "vy": x[3]}
                                         for n, x in enumerate(e.states)]}
                             for e in estimates]}


def write_json(estimates, path):
    with open(path, "w") as f:
        json.dump(to_json(estimates), f, indent=1)


def read_json(path) -> list[Trajectory]:
    with open(path) as f:
        d = json.load(f)
    out = []
    for t in d["trajectories"]:
        states = [[s["px"], s["vx"], s["py"], s["vy"]] for s in t["states"]]
        out.append(Trajectory(t["birth"], np.array(states), id=t["id"],
                              history=tuple(tuple(p) for p in t.get("history", []))))
    return out
