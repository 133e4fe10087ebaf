"""Simulate the crossing scenario, run both samplers briefly and score them.

Usage: python demos/quickstart.py [gibbs_sweeps] [mh_iterations]
"""

import sys
import time

from batch_tpmbm import Problem, WeightCache
from batch_tpmbm import gibbs, mh
from batch_tpmbm.assoc import greedy_init
from batch_tpmbm.estimator import extract, map_hypothesis
from batch_tpmbm.metrics import correct_association_count, trajectory_gospa
from batch_tpmbm.sim import paper_scenario, simulate


def score(name, theta, cache, batch, seconds):
    est = extract(theta, cache)
    g = trajectory_gospa(batch.truth, est)
    n = correct_association_count(batch.truth, est, g, batch.origins)
    print(f"{name:8s} tracks={len(est):2d} gospa={g.total:7.1f} (loc {g.localization:.1f}, missed {g.missed:.0f}, "
          f"false {g.false_:.0f}, switch {g.switch_:.0f}) correct={n} time={seconds:.1f}s")


def main(sweeps=100, iterations=20000):
    sc = paper_scenario()
    batch = simulate(sc, run=0)
    print(f"{sc.n_objects} objects, {sc.K} scans, {sum(len(z) for z in batch.scans)} measurements")
    problem = Problem(batch.scans, sc.motion(), sc.measurement_model(), sc.birth_model(batch.truth))
    cache = WeightCache(problem)
    t = time.perf_counter()
    theta0 = greedy_init(problem, cache)
    score("greedy", theta0, cache, batch, time.perf_counter() - t)
    t = time.perf_counter()
    res = gibbs.run(theta0, sweeps, cache, seed=1)
    score("gibbs", map_hypothesis(res.store), cache, batch, time.perf_counter() - t)
    t = time.perf_counter()
    res = mh.run(theta0, iterations, cache, mh.PRESETS["high"], seed=1)
    score("mh-high", map_hypothesis(res.store), cache, batch, time.perf_counter() - t)
    print("accepted/proposed per move:", {k: f"{a}/{p}" for k, (p, a) in res.moves.items()})


if __name__ == "__main__":
    main(*[int(a) for a in sys.argv[1:3]])
