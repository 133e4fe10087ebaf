"""Batch trajectory PMBM estimation with MCMC multi-scan data association."""

from .core import GaussianMoments, LocalHypothesis, Measurement, TrajectoryComponent
from .models import (BirthModel, MeasurementModel, MotionModel, constant_velocity, gate_threshold,
                     kf_predict, kf_update, paper_models, position_sensor, rts_smooth)
from .tpmbm import HypothesisKey, Problem, TPMBMConfig, WeightCache, local_weight

__all__ = [
    "GaussianMoments", "LocalHypothesis", "Measurement", "TrajectoryComponent",
    "BirthModel", "MeasurementModel", "MotionModel", "constant_velocity", "gate_threshold",
    "kf_predict", "kf_update", "paper_models", "position_sensor", "rts_smooth",
    "HypothesisKey", "Problem", "TPMBMConfig", "WeightCache", "local_weight",
]
