"""Trajectory GOSPA metric.

The multi-scan assignment with switching costs is solved as a linear
program over per-time assignment matrices ``W[k]`` of shape
``(nx + 1, ny + 1)``; the last row and column stand for "unassigned".
Distances use positions only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

RESULT_FIELDS = ["run_id", "method", "iterations", "total", "localization", "missed", "false", "switch",
                 "runtime_s"]
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GospaConfig:
    p: float = 1.0
    c: float = 10.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.p < 1 or self.c <= 0 or self.gamma <= 0:
            raise ValueError("need p >= 1, c > 0 and gamma > 0")


@dataclass
class GospaResult:
    total: float
    localization: float
    missed: float
    false_: float
    switch_: float
    times: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    per_time: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    assignment: list = field(default_factory=list)

    def row(self) -> dict:
        return {"total": self.total, "localization": self.localization, "missed": self.missed,
                "false": self.false_, "switch": self.switch_}


def _positions(trajs, times):
    """``(n, T, 2)`` positions and ``(n, T)`` existence mask over ``times``."""
    T = len(times)
    pos = np.zeros((len(trajs), T, 2))
    alive = np.zeros((len(trajs), T), dtype=bool)
    t0 = times[0] if T else 0
    for n, tr in enumerate(trajs):
        for k in range(max(tr.birth, t0), min(tr.end, times[-1]) + 1):
            pos[n, k - t0] = tr.states[k - tr.birth][[0, 2]]
            alive[n, k - t0] = True
    return pos, alive


def trajectory_gospa(truth, est, cfg: GospaConfig = GospaConfig()) -> GospaResult:
    truth, est = list(truth), list(est)
    everything = truth + est
    if not everything:
        return GospaResult(0.0, 0.0, 0.0, 0.0, 0.0)
    t_lo = min(t.birth for t in everything)
    t_hi = max(t.end for t in everything)
    times = np.arange(t_lo, t_hi + 1)
    T = len(times)
    nx, ny = len(truth), len(est)
    X, ax = _positions(truth, times)
    Y, ay = _positions(est, times)
    half = cfg.c ** cfg.p / 2.0

    if nx == 0 or ny == 0:
        missed = ax.sum(axis=0) * half
        false = ay.sum(axis=0) * half
        per = np.column_stack([np.zeros(T), missed, false, np.zeros(T)])
        return GospaResult(math.fsum(missed) + math.fsum(false), 0.0, math.fsum(missed), math.fsum(false), 0.0,
                           times, per, [[] for _ in range(T)])

    # base costs D[k, i, j] including the dummy row/column
    d = np.linalg.norm(X[:, None, :, :] - Y[None, :, :, :], axis=-1).transpose(2, 0, 1)  # (T, nx, ny)
    both = ax.T[:, :, None] & ay.T[:, None, :]
    one = ax.T[:, :, None] ^ ay.T[:, None, :]
    D = np.zeros((T, nx + 1, ny + 1))
    D[:, :nx, :ny] = np.where(both, np.minimum(d, cfg.c) ** cfg.p, np.where(one, half, 0.0))
    D[:, :nx, ny] = np.where(ax.T, half, 0.0)
    D[:, nx, :ny] = np.where(ay.T, half, 0.0)

    nW = (nx + 1) * (ny + 1)
    nE = nx * ny
    n_var = T * nW + (T - 1) * nE

    def widx(k, i, j):
        return k * nW + i * (ny + 1) + j

    cost = np.zeros(n_var)
    cost[: T * nW] = D.reshape(-1)
    cost[T * nW:] = cfg.gamma ** cfg.p / 2.0
    bounds = [(0, None)] * n_var
    # the dummy-dummy entry is meaningless
    for k in range(T):
        bounds[widx(k, nx, ny)] = (0, 0)

    rows, cols, vals = [], [], []
    r = 0
    for k in range(T):
        for i in range(nx):
            for j in range(ny + 1):
                rows.append(r); cols.append(widx(k, i, j)); vals.append(1.0)
            r += 1
        for j in range(ny):
            for i in range(nx + 1):
                rows.append(r); cols.append(widx(k, i, j)); vals.append(1.0)
            r += 1
    A_eq = coo_matrix((vals, (rows, cols)), shape=(r, n_var)).tocsr()
    b_eq = np.ones(r)

    rows, cols, vals = [], [], []
    r = 0
    for k in range(T - 1):
        for i in range(nx):
            for j in range(ny):
                e = T * nW + k * nE + i * ny + j
                a, b = widx(k, i, j), widx(k + 1, i, j)
                rows += [r, r, r, r + 1, r + 1, r + 1]
                cols += [a, b, e, a, b, e]
                vals += [1.0, -1.0, -1.0, -1.0, 1.0, -1.0]
                r += 2
    if r:
        A_ub = coo_matrix((vals, (rows, cols)), shape=(r, n_var)).tocsr()
        b_ub = np.zeros(r)
    else:
        A_ub, b_ub = None, None
    sol = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if sol.status != 0:
        raise RuntimeError(f"assignment LP failed: {sol.message}")
    W = sol.x[: T * nW].reshape(T, nx + 1, ny + 1)
    # snap solver noise so that integral solutions are reproduced exactly
    Wr = np.round(W)
    W = np.where(np.abs(W - Wr) < 1e-7, Wr, W)

    per = np.zeros((T, 4))
    close = both & (d < cfg.c)
    loc = np.where(close, d ** cfg.p, 0.0) * W[:, :nx, :ny]
    miss_w = W[:, :nx, ny] * ax.T + (W[:, :nx, :ny] * (ax.T[:, :, None] & ~close)).sum(axis=2)
    false_w = W[:, nx, :ny] * ay.T + (W[:, :nx, :ny] * (ay.T[:, None, :] & ~close)).sum(axis=1)
    per[:, 0] = loc.sum(axis=(1, 2))
    per[:, 1] = half * miss_w.sum(axis=1)
    per[:, 2] = half * false_w.sum(axis=1)
    sw = np.abs(np.diff(W[:, :nx, :ny], axis=0)).sum(axis=(1, 2)) * cfg.gamma ** cfg.p / 2.0
    per[1:, 3] = sw
    parts = [math.fsum(per[:, n]) for n in range(4)]
    assignment = [[(i, j) for i in range(nx) for j in range(ny) if W[k, i, j] > 0.5 and both[k, i, j]]
                  for k in range(T)]
    return GospaResult(math.fsum(parts), *parts, times, per, assignment)


def correct_association_count(truth, est, result: GospaResult, origins) -> int:
    """Matched (truth, estimate) scans where the truth's measurement is in the estimate's history.

    ``origins[k-1][j-1]`` is the id of the object that generated measurement
    ``(k, j)``, or a negative value for clutter.
    """
    if origins is None:
        raise ValueError("measurement origin labels are required")
    truth, est = list(truth), list(est)
    if not truth or not est:
        return 0
    generated = {}
    for k, org in enumerate(origins, start=1):
        for j, o in enumerate(org, start=1):
            if o >= 0:
                generated[(o, k)] = (k, j)
    hist_sets = [set(map(tuple, e.history)) for e in est]
    n = 0
    for k, pairs in zip(result.times, result.assignment):
        for i, j in pairs:
            z = generated.get((truth[i].id, int(k)))
            if z is not None and z in hist_sets[j]:
                n += 1
    return n


def write_results(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["schema_version"] + RESULT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({"schema_version": SCHEMA_VERSION, **{k: r.get(k) for k in RESULT_FIELDS}})


def write_per_time(result: GospaResult, path, series: str = ""):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["schema_version", "series", "time", "localization", "missed", "false", "switch", "total"])
        for k, row in zip(result.times, result.per_time):
            w.writerow([SCHEMA_VERSION, series, int(k), *row, row.sum()])
