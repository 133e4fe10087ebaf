import math
from fractions import Fraction

import numpy as np
import pytest

from batch_tpmbm.core import (DegenerateMixtureError, GaussianMoments, LocalHypothesis, Measurement,
                              Trajectory, TrajectoryComponent, logsumexp, normalize_log_weights,
                              prune_components)


def comps(weights, ends=None):
    ends = ends or list(range(len(weights)))
    return [TrajectoryComponent(math.log(w), 1, e, None, None) for w, e in zip(weights, ends)]


def test_normalize_symmetric():
    w, tot = normalize_log_weights([0.0, 0.0])
    assert w == pytest.approx([0.5, 0.5], abs=1e-15)
    assert tot == pytest.approx(math.log(2), abs=1e-15)


def test_normalize_already_normalized():
    w, tot = normalize_log_weights([math.log(0.3), math.log(0.7)])
    assert w == pytest.approx([0.3, 0.7], abs=1e-15)
    assert tot == pytest.approx(0.0, abs=1e-15)


def test_normalize_large_offsets_against_rational_arithmetic():
    w, tot = normalize_log_weights([1000.0, 1000.0 + math.log(3)])
    exact = [Fraction(1, 4), Fraction(3, 4)]
    # the float input 1000 + ln 3 itself carries ~1e-13 rounding
    assert w == pytest.approx([float(x) for x in exact], abs=1e-12)
    assert tot == pytest.approx(1000.0 + math.log(4), abs=1e-12)


def test_normalize_degenerate():
    with pytest.raises(DegenerateMixtureError, match="degenerate mixture"):
        normalize_log_weights([-math.inf, -math.inf])
    with pytest.raises(DegenerateMixtureError):
        normalize_log_weights([])


def test_logsumexp_edges():
    assert logsumexp([]) == -math.inf
    assert logsumexp([-math.inf]) == -math.inf
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2))


def test_prune_boundary_inclusive():
    out = prune_components(comps([0.99, 0.01]), 1e-2)
    assert len(out) == 2


def test_prune_removes_small_and_renormalizes():
    out = prune_components(comps([0.999, 1e-5]), 1e-4)
    assert len(out) == 1
    assert out[0].weight == pytest.approx(1.0, abs=1e-15)


def test_prune_identity_case():
    out = prune_components(comps([0.5, 0.5]), 1e-2)
    assert [c.weight for c in out] == pytest.approx([0.5, 0.5])


def test_prune_threshold_error():
    with pytest.raises(ValueError):
        prune_components(comps([1.0]), 1.0)


def test_prune_by_end_time_marginal():
    # end time 5 carries 2e-5 + 2e-5 < 1e-4 in total and is dropped as a unit
    cs = comps([0.99996, 2e-5, 2e-5], ends=[4, 5, 5])
    out = prune_components(cs, 1e-4, by="end")
    assert [c.end for c in out] == [4]


@pytest.mark.parametrize("weights", [[0.2, 0.3, 0.5], [1e-6, 0.5, 0.499999], [0.7, 0.3]])
def test_prune_then_normalize_idempotent(weights):
    once = prune_components(comps(weights), 1e-3)
    twice = prune_components(once, 1e-3)
    assert [c.log_weight for c in once] == pytest.approx([c.log_weight for c in twice], abs=1e-12)
    assert math.fsum(c.weight for c in once) == pytest.approx(1.0, abs=1e-9)


def test_value_types():
    z = Measurement(3, 2, np.array([1.0, 2.0]))
    assert z.key == (3, 2)
    g = GaussianMoments([1, 2, 3, 4], np.eye(4).tolist())
    assert g.mean.dtype == float and g.cov.shape == (4, 4)
    h = LocalHypothesis.null(5)
    assert h.existence == 0.0 and h.log_weight == 0.0 and h.history == ()
    assert not LocalHypothesis.impossible(((1, 1),)).is_possible


def test_time_pmf_and_max_end():
    cs = [TrajectoryComponent(math.log(0.25), 1, 3, None, None), TrajectoryComponent(math.log(0.25), 1, 3, None, None),
          TrajectoryComponent(math.log(0.5), 2, 4, None, None)]
    h = LocalHypothesis(1.0, tuple(cs), 0.0, ((1, 1), (2, 1)), 4)
    assert h.time_pmf() == pytest.approx({(1, 3): 0.5, (2, 4): 0.5})
    assert h.max_end == 4
    assert h.alive_mass == pytest.approx(0.5)


def test_trajectory_helpers():
    t = Trajectory(3, np.arange(12.0).reshape(3, 4))
    assert t.end == 5 and t.alive(3) and t.alive(5) and not t.alive(6)
    assert t.position(4).tolist() == [4.0, 6.0]
