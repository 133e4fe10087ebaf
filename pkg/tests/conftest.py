import functools
import os
import sys
from dataclasses import dataclass

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import oracles  # noqa: E402
from batch_tpmbm import (BirthModel, GaussianMoments, Problem, TPMBMConfig, WeightCache,  # noqa: E402
                         constant_velocity, position_sensor)

# no truncation and a gate far enough out that nothing is gated on tiny instances
EXACT = TPMBMConfig(gate_prob=1.0 - 1e-12, poisson_threshold=0.0, birth_threshold=0.0, end_threshold=0.0,
                    existence_threshold=0.0)
REGION = ((-20.0, 20.0), (-20.0, 20.0))
BIRTH_COV = np.diag([25.0, 4.0, 25.0, 4.0])


@dataclass
class Tiny:
    problem: Problem
    cache: WeightCache
    log_w: object  # oracle local log-weight of a history
    posterior: dict  # vectors -> [log_pi, prob, partition]
    params: dict


def make_tiny(seed: int, m=None, K=None) -> Tiny:
    """Randomized tiny instance (K <= 3, at most 5 measurements)."""
    rng = np.random.default_rng(seed)
    if m is None:
        K = K or int(rng.integers(2, 4))
        total = int(rng.integers(K, 6))
        m = [1] * K
        for _ in range(total - K):
            m[int(rng.integers(K))] += 1
    pd = float(rng.uniform(0.5, 0.95))
    ps = float(rng.uniform(0.8, 0.99))
    rate = float(rng.choice([0.0, 0.5, 2.0, 8.0]))
    q = float(rng.uniform(0.05, 0.5))
    motion = constant_velocity(1.0, q, ps)
    meas = position_sensor(pd, rate, 1.0, REGION)
    means = [np.array([0.0, 1.0, 0.0, 1.0])]
    if rng.random() < 0.5:
        means.append(np.array([3.0, 0.0, -2.0, 0.5]))
    weight = float(rng.uniform(0.05, 0.5))
    birth = BirthModel(tuple((np.log(weight), GaussianMoments(mu, BIRTH_COV))
                             for mu in means))
    scans = [np.array([k, k], float) + rng.normal(0, 1.5, size=(mk, 2)) for k, mk in enumerate(m, start=1)]
    problem = Problem(scans, motion, meas, birth, EXACT)
    cache = WeightCache(problem)

    @functools.lru_cache(maxsize=None)
    def log_w(h):
        return oracles.oracle_log_weight(h, problem.scans, motion, meas, means, weight, BIRTH_COV)

    post = oracles.exact_posterior(problem.m, log_w)
    params = {"pd": pd, "ps": ps, "rate": rate, "q": q, "m": list(m), "n_birth": len(means), "means": means,
              "weight": weight}
    return Tiny(problem, cache, log_w, post, params)


TINY_SEEDS = list(range(24))


@pytest.fixture(scope="session")
def tiny_instances():
    return [make_tiny(s) for s in TINY_SEEDS]


@pytest.fixture(scope="session")
def stationary_instance():
    """Instance with 87 valid associations used for the long-run tests."""
    return make_tiny(1000, m=[2, 2, 2])


# --------------------------------------------------------------------------
# Acceptance report: one PASS/FAIL line per criterion, printed after the run

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
