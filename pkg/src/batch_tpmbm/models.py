"""Linear-Gaussian single-object models: Kalman prediction/update, RTS
smoothing, ellipsoidal gating and the constant-velocity presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

from .core import GaussianMoments

LOG_2PI = math.log(2.0 * math.pi)


class SingularModelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MotionModel:
    F: np.ndarray
    Q: np.ndarray
    ps: float = 0.98

    def __post_init__(self):
        if not 0.0 < self.ps <= 1.0:
            raise ValueError("survival probability must lie in (0, 1]")


@dataclass(frozen=True)
class MeasurementModel:
    H: np.ndarray
    R: np.ndarray
    pd: float = 0.7
    clutter_rate: float = 30.0
    region: tuple = ((-200.0, 200.0), (-200.0, 200.0))

    def __post_init__(self):
        if not 0.0 < self.pd <= 1.0:
            raise ValueError("detection probability must lie in (0, 1]")

    @property
    def area(self) -> float:
        (x0, x1), (y0, y1) = self.region
        return (x1 - x0) * (y1 - y0)

    def in_region(self, z) -> bool:
        (x0, x1), (y0, y1) = self.region
        return x0 <= z[0] <= x1 and y0 <= z[1] <= y1

    def clutter_intensity(self, z) -> float:
        if self.clutter_rate <= 0 or not self.in_region(z):
            return 0.0
        return self.clutter_rate / self.area


@dataclass(frozen=True)
class BirthModel:
    """Poisson birth intensity as a Gaussian mixture of (log-weight, moments)."""

    components: tuple = field(default_factory=tuple)

    @classmethod
    def from_means(cls, means, weight=0.01, cov=None):
        means = [np.asarray(m, dtype=float) for m in means]
        if cov is None:
            cov = 4.0 * np.eye(means[0].size) if means else None
        return cls(tuple((math.log(weight), GaussianMoments(m, cov)) for m in means))


def constant_velocity(Ts: float = 1.0, q: float = 0.09, ps: float = 0.98) -> MotionModel:
    """Nearly constant velocity model with state (px, vx, py, vy)."""
    F1 = np.array([[1.0, Ts], [0.0, 1.0]])
    Q1 = q * np.array([[Ts**3 / 2.0, Ts**2 / 2.0], [Ts**2 / 2.0, Ts]])
    return MotionModel(np.kron(np.eye(2), F1), np.kron(np.eye(2), Q1), ps)


def position_sensor(pd: float = 0.7, clutter_rate: float = 30.0, r: float = 1.0,
                    region=((-200.0, 200.0), (-200.0, 200.0))) -> MeasurementModel:
    H = np.kron(np.eye(2), np.array([[1.0, 0.0]]))
    return MeasurementModel(H, r * np.eye(2), pd, clutter_rate, tuple(map(tuple, region)))


def paper_models() -> tuple[MotionModel, MeasurementModel]:
    """Ts = 1, q = 0.09, ps = 0.98, R = I, pd = 0.7, 30 clutter/scan on [-200, 200]^2."""
    return constant_velocity(), position_sensor()


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kf_predict(state: GaussianMoments, model: MotionModel) -> GaussianMoments:
    mean, cov = predict_moments(state.mean, state.cov, model.F, model.Q)
    return GaussianMoments(mean, cov)


def predict_moments(mean, cov, F, Q):
    return F @ mean, symmetrize(F @ cov @ F.T + Q)


def _inv_logdet(S: np.ndarray) -> tuple[np.ndarray, float]:
    if S.shape == (2, 2):
        a, b, c, d = S[0, 0], S[0, 1], S[1, 0], S[1, 1]
        det = a * d - b * c
        if not det > 0.0 or not math.isfinite(det):
            raise SingularModelError("singular model: innovation covariance not invertible")
        return np.array([[d, -b], [-c, a]]) / det, math.log(det)
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        raise SingularModelError("singular model: innovation covariance not invertible")
    return np.linalg.inv(S), logdet


def innovation(mean, cov, H, R):
    """Predicted measurement mean, innovation covariance and its inverse/log-det."""
    zhat = H @ mean
    S = H @ cov @ H.T + R
    Sinv, logdet = _inv_logdet(S)
    return zhat, S, Sinv, logdet


def update_moments(mean, cov, z, H, R):
    """Kalman update with Joseph-form covariance.

    Returns ``(mean, cov, log_likelihood, mahalanobis_sq)``.
    """
    zhat, S, Sinv, logdet = innovation(mean, cov, H, R)
    nu = z - zhat
    d2 = float(nu @ Sinv @ nu)
    loglik = -0.5 * (d2 + logdet + nu.size * LOG_2PI)
    K = cov @ H.T @ Sinv
    I_KH = np.eye(mean.size) - K @ H
    post = I_KH @ cov @ I_KH.T + K @ R @ K.T
    return mean + K @ nu, symmetrize(post), loglik, d2


def kf_update(state: GaussianMoments, z, model: MeasurementModel) -> tuple[GaussianMoments, float]:
    """Condition ``state`` on a position measurement.

    ``z`` may be a :class:`~batch_tpmbm.core.Measurement` or a raw vector.
    Returns the posterior moments and ln N(z; H m, H P H' + R).
    """
    zv = np.asarray(getattr(z, "value", z), dtype=float)
    mean, cov, loglik, _ = update_moments(state.mean, state.cov, zv, model.H, model.R)
    return GaussianMoments(mean, cov), loglik


def rts_smooth(filtered, predicted, model: MotionModel) -> list[GaussianMoments]:
    """Rauch-Tung-Striebel backward pass.

    ``predicted[t]`` is the one-step prediction made from ``filtered[t]``, so
    ``len(predicted) == len(filtered) - 1``.
    """
    n = len(filtered)
    if len(predicted) != n - 1:
        raise ValueError(f"expected {n - 1} predictions, got {len(predicted)}")
    if n == 0:
        return []
    ms = [None] * n
    Ps = [None] * n
    ms[-1], Ps[-1] = filtered[-1].mean, filtered[-1].cov
    F = model.F
    for t in range(n - 2, -1, -1):
        mf, Pf = filtered[t].mean, filtered[t].cov
        mp, Pp = predicted[t].mean, predicted[t].cov
        G = np.linalg.solve(Pp.T, (Pf @ F.T).T).T
        ms[t] = mf + G @ (ms[t + 1] - mp)
        Ps[t] = symmetrize(Pf + G @ (Ps[t + 1] - Pp) @ G.T)
    return [GaussianMoments(m, P) for m, P in zip(ms, Ps)]


@lru_cache(maxsize=None)
def gate_threshold(gate_prob: float, dof: int = 2) -> float:
    """Chi-square quantile used as the squared Mahalanobis gate."""
    if not 0.0 < gate_prob < 1.0:
        raise ValueError("gate probability must lie in (0, 1)")
    return float(chi2.ppf(gate_prob, dof))


def gate(z, predicted_state: GaussianMoments, model: MeasurementModel, gate_prob: float = 0.999) -> bool:
    zv = np.asarray(getattr(z, "value", z), dtype=float)
    zhat, _, Sinv, _ = innovation(predicted_state.mean, predicted_state.cov, model.H, model.R)
    nu = zv - zhat
    return float(nu @ Sinv @ nu) <= gate_threshold(gate_prob, zv.size)


def gate_many(Z: np.ndarray, mean, cov, H, R, threshold: float) -> np.ndarray:
    """Boolean mask of the rows of ``Z`` inside the ellipsoidal gate."""
    if len(Z) == 0:
        return np.zeros(0, dtype=bool)
    zhat, _, Sinv, _ = innovation(mean, cov, H, R)
    nu = Z - zhat
    d2 = np.einsum("ni,ij,nj->n", nu, Sinv, nu)
    return d2 <= threshold
