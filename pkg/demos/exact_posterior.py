"""Compare sampler visit frequencies with the exact posterior on a tiny batch.

Every valid association of a 3-scan, 5-measurement batch is enumerated
through the package's own validity check, so the exact posterior is known.
"""

import itertools

import numpy as np

from batch_tpmbm import BirthModel, Problem, TPMBMConfig, WeightCache, constant_velocity, position_sensor
from batch_tpmbm import gibbs, mh
from batch_tpmbm.assoc import Theta, log_pi, theta_hat, validate

EXACT = TPMBMConfig(gate_prob=1 - 1e-12, poisson_threshold=0.0, birth_threshold=0.0, end_threshold=0.0,
                    existence_threshold=0.0)


def enumerate_valid(m):
    off = np.concatenate([[0], np.cumsum(m)])
    per_scan = [itertools.product(range(m[k] + 1), repeat=int(off[k + 1])) for k in range(len(m))]
    for vecs in itertools.product(*[list(p) for p in per_scan]):
        th = Theta([np.array(v) for v in vecs], m)
        if validate(th)[0]:
            yield th


def main(n=100000):
    rng = np.random.default_rng(3)
    m = [2, 1, 2]
    scans = [np.array([k, k], float) + rng.normal(0, 1.5, size=(mk, 2)) for k, mk in enumerate(m, start=1)]
    birth = BirthModel.from_means([[0.0, 1.0, 0.0, 1.0]], 0.2, np.diag([25.0, 4.0, 25.0, 4.0]))
    problem = Problem(scans, constant_velocity(1.0, 0.2, 0.95), position_sensor(0.8, 2.0, 1.0, ((-20, 20), (-20, 20))),
                      birth, EXACT)
    cache = WeightCache(problem)
    thetas = list(enumerate_valid(m))
    lp = np.array([log_pi(t, cache) for t in thetas])
    exact = np.exp(lp - lp.max())
    exact /= exact.sum()
    key = lambda th: tuple(tuple(int(x) for x in v) for v in th.per_scan)
    exact = {key(t): p for t, p in zip(thetas, exact)}
    print(f"{len(thetas)} valid associations")
    for name, res in (("gibbs", gibbs.run(theta_hat(m), n, cache, seed=0, keep_all=True)),
                      ("mh", mh.run(theta_hat(m), n, cache, seed=0, keep_all=True))):
        emp = {key(t): p for t, p in res.store.distribution().items()}
        tv = 0.5 * sum(abs(emp.get(k, 0.0) - exact.get(k, 0.0)) for k in set(emp) | set(exact))
        print(f"{name}: total variation to exact posterior after {n} iterations = {tv:.4f}")


if __name__ == "__main__":
    main()
