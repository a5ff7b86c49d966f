"""
Joint polarization and phase tracking
Unscented Kalman filter with state [a, b, phi] driven by the real pilot tone:

    y1 =  a * sqrt(P) * cos(2 pi f k / fs + phi)
    y2 = -b * sqrt(P) * cos(2 pi f k / fs + phi)

The estimates de-rotate and de-phase the quantum band.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from filterpy.kalman import MerweScaledSigmaPoints

from config.settings import (
    UKF_Q_AB, UKF_Q_PHI, UKF_ALPHA, UKF_BETA, UKF_KAPPA, UKF_JITTER, UKF_DECIMATION,
)
from models.kernels import joint_ukf_kernel
from utils.errors import ConfigError, CovarianceError, DegenerateEstimateError, EstimatorError

logger = logging.getLogger(__name__)

DIM_X = 3
DIM_Z = 2

# Runtime-measured fields; the rest are tunables a config file may set
MEASURED_FIELDS = ("r_meas", "p_sig", "pilot_freq", "sample_rate", "init_mean", "init_cov")


@dataclass
class UkfConfig:
    q_ab: float = UKF_Q_AB
    q_phi: float = UKF_Q_PHI
    r_meas: float = 1.0
    p_sig: float = 1.0
    pilot_freq: float = 0.0
    sample_rate: float = 1.0
    alpha: float = UKF_ALPHA
    beta_ut: float = UKF_BETA
    kappa: float = UKF_KAPPA
    init_mean: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    init_cov: np.ndarray = field(default_factory=lambda: np.diag([1e-2, 1e-2, 1e-1]))
    jitter: float = UKF_JITTER
    decimation: int = UKF_DECIMATION
    init_from_pilot: bool = True

    def validate(self, path="ukf"):
        if self.q_ab < 0 or self.q_phi < 0:
            raise ConfigError(f"{path}.q_ab", "process noise must be >= 0")
        if not self.r_meas > 0:
            raise ConfigError(f"{path}.r_meas", "measurement noise must be positive")
        if not self.p_sig > 0:
            raise ConfigError(f"{path}.p_sig", "pilot power must be positive")
        if not self.sample_rate > 0:
            raise ConfigError(f"{path}.sample_rate", "must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"{path}.alpha", "must lie in (0, 1]")
        if self.kappa + DIM_X <= 0:
            raise ConfigError(f"{path}.kappa", "n + kappa must be positive")
        if self.jitter < 0:
            raise ConfigError(f"{path}.jitter", "must be >= 0")
        if int(self.decimation) < 1:
            raise ConfigError(f"{path}.decimation", "must be >= 1")

    @property
    def omega(self):
        """Pilot phase advance per sample (rad)"""
        return 2 * np.pi * self.pilot_freq / self.sample_rate

    def spread(self, dim=DIM_X):
        """Unscented scaling lambda = alpha^2 (n + kappa) - n"""
        return self.alpha ** 2 * (dim + self.kappa) - dim

    def sigma_point_scheme(self, dim=DIM_X):
        return MerweScaledSigmaPoints(dim, alpha=self.alpha, beta=self.beta_ut, kappa=self.kappa)

    def initial_state(self):
        return UkfState(np.array(self.init_mean, dtype=float), np.array(self.init_cov, dtype=float))


@dataclass
class UkfState:
    mean: np.ndarray
    cov: np.ndarray

    def copy(self):
        return UkfState(self.mean.copy(), self.cov.copy())

    def check(self, tol=1e-12):
        """Symmetric to tol and positive definite"""
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=tol):
            raise CovarianceError("covariance lost symmetry")
        if np.linalg.eigvalsh(self.cov).min() <= 0:
            raise CovarianceError("covariance is not positive definite")


@dataclass
class EstimateTrack:
    """Posterior means and variances at sample indices `index`"""

    index: np.ndarray
    a: np.ndarray
    b: np.ndarray
    phi: np.ndarray
    var_a: np.ndarray
    var_b: np.ndarray
    var_phi: np.ndarray
    decimation: int = 1

    def __len__(self):
        return self.index.shape[0]

    def rotation_angle(self):
        return np.arctan2(self.b, self.a)

    def at(self, n):
        """(a, b, phi) for samples 0..n-1, linearly interpolated between stored entries"""
        if len(self) == n and self.decimation == 1:
            return self.a, self.b, self.phi
        k = np.arange(n)
        return (np.interp(k, self.index, self.a),
                np.interp(k, self.index, self.b),
                np.interp(k, self.index, self.phi))

    def to_frame(self, step=1):
        """Every step-th stored entry"""
        rows = slice(None, None, int(step))
        return pd.DataFrame({
            "k": self.index[rows],
            "a": self.a[rows],
            "b": self.b[rows],
            "phi": self.phi[rows],
            "var_a": self.var_a[rows],
            "var_b": self.var_b[rows],
            "var_phi": self.var_phi[rows],
        })


def sigma_points(state, cfg):
    """
    Merwe scaled sigma points of the state (2n+1 = 7 for n = 3)

    Returns:
        (points (7, 3), weights_mean (7,), weights_cov (7,))
    """
    dim = state.mean.shape[0]
    scheme = cfg.sigma_point_scheme(dim)
    try:
        points = scheme.sigma_points(state.mean, state.cov + cfg.jitter * np.eye(dim))
    except np.linalg.LinAlgError as e:
        raise CovarianceError(f"covariance is not positive definite: {e}") from e
    return points, scheme.Wm, scheme.Wc


def predict(state, cfg):
    """Identity transition; covariance grows by diag(q_ab, q_ab, q_phi)"""
    return UkfState(state.mean.copy(), state.cov + np.diag([cfg.q_ab, cfg.q_ab, cfg.q_phi]))


def measurement_model(x, k, cfg):
    carrier = np.sqrt(cfg.p_sig) * np.cos(cfg.omega * k + x[2])
    return np.array([x[0] * carrier, -x[1] * carrier])


def update(state, y, k, cfg, hx=None):
    """
    Unscented measurement update

    Args:
        state: predicted UkfState
        y: measurement vector
        k: absolute sample index
        cfg: UkfConfig
        hx: optional measurement function hx(x, k); defaults to measurement_model

    Returns:
        posterior UkfState (covariance symmetrized)
    """
    if not cfg.r_meas > 0:
        raise CovarianceError(f"measurement noise r_meas must be positive, got {cfg.r_meas}")
    hx = hx or (lambda x, idx: measurement_model(x, idx, cfg))
    points, wm, wc = sigma_points(state, cfg)
    z = np.array([hx(p, k) for p in points])
    y = np.atleast_1d(np.asarray(y, dtype=float))

    x_mean = wm @ points
    z_mean = wm @ z
    dx = points - x_mean
    dz = z - z_mean
    s = (wc[:, None] * dz).T @ dz + cfg.r_meas * np.eye(z.shape[1])
    pxz = (wc[:, None] * dx).T @ dz

    if not np.all(np.isfinite(s)) or np.linalg.det(s) <= 0:
        raise CovarianceError("innovation covariance is singular (check r_meas)")
    gain = np.linalg.solve(s.T, pxz.T).T

    mean = state.mean + gain @ (y - z_mean)
    cov = state.cov - gain @ s @ gain.T
    posterior = UkfState(mean, 0.5 * (cov + cov.T))
    if logger.isEnabledFor(logging.DEBUG):
        posterior.check()
    return posterior


def run_ukf(pilot, cfg, start=0):
    """
    Sequential predict/update over a pilot-band record

    Args:
        pilot: DualPolWaveform of the pilot band; the real parts are the measurements
        cfg: UkfConfig with measured r_meas, p_sig and pilot_freq
        start: absolute index of the first sample

    Returns:
        EstimateTrack (one entry per sample when decimation is 1)
    """
    cfg.validate()
    y1 = np.ascontiguousarray(np.real(pilot.x), dtype=float)
    y2 = np.ascontiguousarray(np.real(pilot.y), dtype=float)
    n = y1.shape[0]
    decimation = int(cfg.decimation)
    rows = (n + decimation - 1) // decimation

    scheme = cfg.sigma_point_scheme()
    state = cfg.initial_state()
    out_mean = np.empty((rows, DIM_X))
    out_var = np.empty((rows, DIM_X))

    failed = joint_ukf_kernel(
        y1, y2, int(start), cfg.omega, float(np.sqrt(cfg.p_sig)), float(cfg.r_meas),
        float(cfg.q_ab), float(cfg.q_phi), float(cfg.spread()), scheme.Wm, scheme.Wc,
        float(cfg.jitter), state.mean, state.cov, decimation, out_mean, out_var,
    )
    if failed >= 0:
        raise CovarianceError("joint UKF lost positive definiteness", sample_index=start + failed)
    state.check()

    index = np.arange(0, n, decimation)
    logger.debug("joint UKF: %d samples, final state %s", n, np.array2string(state.mean, precision=4))
    return EstimateTrack(
        index=index,
        a=out_mean[:, 0], b=out_mean[:, 1], phi=np.unwrap(out_mean[:, 2]),
        var_a=out_var[:, 0], var_b=out_var[:, 1], var_phi=out_var[:, 2],
        decimation=decimation,
    )


def coarse_pilot_state(pilot, pilot_freq, n_samples=4096):
    """
    Initial (a, b, phi) and pilot power from a complex correlation of the first samples
    of the analytic pilot band. Resolves the (a, b, phi) ~ (-a, -b, phi + pi) ambiguity with a >= 0.

    Returns:
        (init_mean array [a, b, phi], pilot power)
    """
    n = min(n_samples, len(pilot))
    if n == 0:
        raise EstimatorError("empty pilot record")
    k = np.arange(n)
    ref = np.exp(-2j * np.pi * pilot_freq / pilot.sample_rate * k)
    zx = np.mean(pilot.x[:n] * ref)
    zy = np.mean(pilot.y[:n] * ref)
    power = abs(zx) ** 2 + abs(zy) ** 2
    if power <= 0:
        raise EstimatorError("pilot has no power at the expected frequency")

    phi0 = 0.5 * np.angle(zx ** 2 + zy ** 2)
    amp = np.sqrt(power)
    a0 = np.real(zx * np.exp(-1j * phi0)) / amp
    b0 = -np.real(zy * np.exp(-1j * phi0)) / amp
    if a0 < 0:
        a0, b0, phi0 = -a0, -b0, phi0 + np.pi
    return np.array([a0, b0, phi0]), float(power)


def configure_from_pilot(base, pilot, pilot_freq, noise_var, p_sig=None):
    """UkfConfig with the measured pilot frequency, power, noise floor and coarse start"""
    init_mean, power = coarse_pilot_state(pilot, pilot_freq)
    if p_sig is not None:
        power = float(p_sig)
    if not base.init_from_pilot:
        init_mean = np.array(base.init_mean, dtype=float)
    return replace(base, r_meas=float(noise_var), p_sig=power, pilot_freq=float(pilot_freq),
                   sample_rate=pilot.sample_rate, init_mean=init_mean)


def derotate(quantum, track):
    """
    Normalized inverse rotation and phase removal on both ports

    Returns:
        (x-port, y-port) complex streams
    """
    n = len(quantum)
    a, b, phi = track.at(n)
    norm = np.hypot(a, b)
    if np.any(norm ** 2 < 1e-12):
        k = int(np.argmax(norm ** 2 < 1e-12))
        raise DegenerateEstimateError("rotation estimate collapsed (a^2 + b^2 < 1e-12)", sample_index=k)
    a = a / norm
    b = b / norm
    phase = np.exp(-1j * phi)
    x = (a * quantum.x - b * quantum.y) * phase
    y = (b * quantum.x + a * quantum.y) * phase
    return x, y


def compensate(quantum, track):
    """x-port stream after rotation and phase compensation"""
    return derotate(quantum, track)[0]
