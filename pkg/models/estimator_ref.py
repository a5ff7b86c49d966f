"""
Reference chain
One-tap constant modulus equalizer on the pilot band for polarization, followed by
a phase-only UKF on the equalized pilot for carrier phase.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.linalg import polar

from config.settings import (
    CMA_MU, CMA_SMOOTHING_FRACTION, CMA_DIVERGENCE_NORM, FRAME_LENGTH,
    UKF_Q_PHI, UKF_ALPHA, UKF_BETA, UKF_KAPPA, UKF_JITTER, UKF_DECIMATION,
)
from models.kernels import cma_kernel, phase_ukf_kernel
from utils.errors import (
    CmaDivergenceError, ConfigError, CovarianceError, DegenerateEstimateError, EstimatorError,
)

logger = logging.getLogger(__name__)


@dataclass
class CmaConfig:
    mu: float = CMA_MU
    r_target: float = 1.0
    smoothing_fraction: float = CMA_SMOOTHING_FRACTION
    divergence_norm: float = CMA_DIVERGENCE_NORM
    constrain: bool = True
    trajectory_stride: int = 1000

    def validate(self, path="cma"):
        if self.mu < 0:
            raise ConfigError(f"{path}.mu", "must be >= 0")
        if not self.r_target > 0:
            raise ConfigError(f"{path}.r_target", "must be positive")
        if not 0 < self.smoothing_fraction <= 1:
            raise ConfigError(f"{path}.smoothing_fraction", "must lie in (0, 1]")
        if not self.divergence_norm > 0:
            raise ConfigError(f"{path}.divergence_norm", "must be positive")
        if int(self.trajectory_stride) < 1:
            raise ConfigError(f"{path}.trajectory_stride", "must be >= 1")


@dataclass
class CmaState:
    w: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    mu: float = CMA_MU
    r_target: float = 1.0
    constrain: bool = True
    divergence_norm: float = CMA_DIVERGENCE_NORM


@dataclass
class PhaseUkfConfig:
    q_phi: float = UKF_Q_PHI
    r_meas: float = 1.0
    p_sig: float = 1.0
    pilot_freq: float = 0.0
    sample_rate: float = 1.0
    alpha: float = UKF_ALPHA
    beta_ut: float = UKF_BETA
    kappa: float = UKF_KAPPA
    init_phi: float = 0.0
    init_var: float = 1e-1
    jitter: float = UKF_JITTER
    decimation: int = UKF_DECIMATION

    @classmethod
    def from_joint(cls, ukf):
        """Phase-only settings sharing the joint filter's tuning and measured inputs"""
        return cls(
            q_phi=ukf.q_phi, r_meas=ukf.r_meas, p_sig=ukf.p_sig, pilot_freq=ukf.pilot_freq,
            sample_rate=ukf.sample_rate, alpha=ukf.alpha, beta_ut=ukf.beta_ut, kappa=ukf.kappa,
            init_var=float(ukf.init_cov[2, 2]), jitter=ukf.jitter, decimation=ukf.decimation,
        )

    def validate(self, path="ukf"):
        if self.q_phi < 0:
            raise ConfigError(f"{path}.q_phi", "must be >= 0")
        if not self.r_meas > 0:
            raise ConfigError(f"{path}.r_meas", "measurement noise must be positive")
        if not self.p_sig > 0:
            raise ConfigError(f"{path}.p_sig", "pilot power must be positive")
        if not self.init_var > 0:
            raise ConfigError(f"{path}.init_var", "must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"{path}.alpha", "must lie in (0, 1]")
        if int(self.decimation) < 1:
            raise ConfigError(f"{path}.decimation", "must be >= 1")

    @property
    def omega(self):
        return 2 * np.pi * self.pilot_freq / self.sample_rate

    def weights(self):
        lam = self.alpha ** 2 * (1 + self.kappa) - 1
        wm = np.full(3, 1 / (2 * (1 + lam)))
        wc = wm.copy()
        wm[0] = lam / (1 + lam)
        wc[0] = wm[0] + 1 - self.alpha ** 2 + self.beta_ut
        return lam, wm, wc


@dataclass
class PhaseUkfState:
    mean: float
    var: float


@dataclass
class PhaseTrack:
    index: np.ndarray
    phi: np.ndarray
    var: np.ndarray
    decimation: int = 1

    def __len__(self):
        return self.index.shape[0]

    def at(self, n):
        if len(self) == n and self.decimation == 1:
            return self.phi
        return np.interp(np.arange(n), self.index, self.phi)


@dataclass
class ReferenceOutput:
    """Everything the reference chain produced for one record"""

    stream: np.ndarray
    matrices: np.ndarray           # unitary matrix applied per segment
    trajectory: np.ndarray         # raw CMA matrices every trajectory_stride samples
    trajectory_stride: int
    phase: PhaseTrack


def cma_step(state, x):
    """
    One CMA iteration

    Args:
        state: CmaState
        x: input pair [x1, x2]

    Returns:
        (new CmaState, output pair y = w x computed before the update)
    """
    x = np.asarray(x, dtype=complex)
    y = state.w @ x
    err = state.r_target - abs(y[0]) ** 2
    step = state.mu * err
    # zero step leaves w exactly as given, untied rows included
    if step == 0:
        return state, y
    w = state.w.astype(complex, copy=True)
    w[0] += step * y[0] * np.conj(x)
    if state.constrain:
        norm = np.linalg.norm(w[0])
        if norm > 0 and np.isfinite(norm):
            w[0] /= norm
    w[1] = [-np.conj(w[0, 1]), np.conj(w[0, 0])]
    if not np.linalg.norm(w) <= state.divergence_norm:
        raise CmaDivergenceError(
            f"equalizer norm exceeded {state.divergence_norm:g}; step size mu={state.mu:g} is unstable"
        )
    return replace(state, w=w), y


def normalize_rotation(w):
    """Nearest unitary matrix w (w^H w)^(-1/2) via the polar decomposition"""
    w = np.asarray(w, dtype=complex)
    if not np.all(np.isfinite(w)):
        raise DegenerateEstimateError("equalizer matrix is not finite")
    singular = np.linalg.svd(w, compute_uv=False)
    if singular[-1] <= 1e-12 * max(singular[0], 1.0):
        raise DegenerateEstimateError("equalizer matrix is singular")
    unitary, _ = polar(w)
    return unitary


def run_cma(pilot, cfg, segment):
    """
    CMA over a unit-power pilot record

    Args:
        pilot: DualPolWaveform (complex pilot band, normalized to unit power)
        cfg: CmaConfig
        segment: samples per application segment

    Returns:
        (tail-averaged matrix per segment, trajectory, final CmaState)
    """
    cfg.validate()
    px = np.ascontiguousarray(pilot.x, dtype=complex)
    py = np.ascontiguousarray(pilot.y, dtype=complex)
    stride = int(cfg.trajectory_stride)
    trajectory = np.zeros(((len(px) + stride - 1) // stride, 2, 2), dtype=complex)
    w = np.eye(2, dtype=complex)

    failed, averages = cma_kernel(
        px, py, w, float(cfg.mu), float(cfg.r_target), float(cfg.divergence_norm),
        bool(cfg.constrain), int(segment), float(cfg.smoothing_fraction), stride, trajectory,
    )
    if failed >= 0:
        raise CmaDivergenceError(
            f"equalizer norm exceeded {cfg.divergence_norm:g}; step size mu={cfg.mu:g} is unstable",
            sample_index=failed,
        )
    state = CmaState(w=w, mu=cfg.mu, r_target=cfg.r_target, constrain=cfg.constrain,
                     divergence_norm=cfg.divergence_norm)
    return averages, trajectory, state


def phase_ukf_step(state, y, k, cfg):
    """Predict and update the scalar phase filter with one real pilot sample"""
    lam, wm, wc = cfg.weights()
    var = state.var + cfg.q_phi + cfg.jitter
    if not var > 0:
        raise CovarianceError("phase variance is not positive", sample_index=k)
    root = np.sqrt((1 + lam) * var)
    points = state.mean + np.array([0.0, root, -root])
    z = np.sqrt(cfg.p_sig) * np.cos(cfg.omega * k + points)
    z_mean = wm @ z
    s = wc @ (z - z_mean) ** 2 + cfg.r_meas
    if not s > 0:
        raise CovarianceError("innovation variance is not positive (check r_meas)", sample_index=k)
    gain = (wc @ ((points - state.mean) * (z - z_mean))) / s
    return PhaseUkfState(state.mean + gain * (y - z_mean), var - cfg.jitter - gain ** 2 * s)


def phase_ukf_run(pilot, cfg, start=0):
    """
    Phase-only UKF over a real pilot stream

    Args:
        pilot: real samples (x-port of the equalized pilot band)
        cfg: PhaseUkfConfig
        start: absolute index of the first sample

    Returns:
        PhaseTrack with unwrapped phase
    """
    cfg.validate()
    y = np.ascontiguousarray(np.real(pilot), dtype=float)
    decimation = int(cfg.decimation)
    rows = (y.shape[0] + decimation - 1) // decimation
    out_phi = np.empty(rows)
    out_var = np.empty(rows)
    lam, wm, wc = cfg.weights()

    failed, _, _ = phase_ukf_kernel(
        y, int(start), cfg.omega, float(np.sqrt(cfg.p_sig)), float(cfg.r_meas), float(cfg.q_phi),
        float(lam), wm, wc, float(cfg.jitter), float(cfg.init_phi), float(cfg.init_var),
        decimation, out_phi, out_var,
    )
    if failed >= 0:
        raise CovarianceError("phase UKF lost a positive variance", sample_index=start + failed)
    return PhaseTrack(np.arange(0, y.shape[0], decimation), np.unwrap(out_phi), out_var, decimation)


def _apply_per_segment(wf, matrices, segment):
    x = np.empty(len(wf), dtype=complex)
    y = np.empty(len(wf), dtype=complex)
    for i, u in enumerate(matrices):
        sl = slice(i * segment, (i + 1) * segment)
        x[sl] = u[0, 0] * wf.x[sl] + u[0, 1] * wf.y[sl]
        y[sl] = u[1, 0] * wf.x[sl] + u[1, 1] * wf.y[sl]
    return wf.with_streams(x, y)


def reference_chain(pilot, quantum, cma, phase, frame_length=FRAME_LENGTH, samples_per_symbol=1):
    """
    CMA polarization compensation per frame, then phase-only UKF

    Args:
        pilot: analytic pilot band (DualPolWaveform)
        quantum: baseband quantum band (DualPolWaveform, same length)
        cma: CmaConfig
        phase: PhaseUkfConfig with measured pilot power, frequency and noise floor
        frame_length: symbols per frame
        samples_per_symbol: oversampling of the records

    Returns:
        ReferenceOutput
    """
    if len(pilot) != len(quantum):
        raise EstimatorError(f"pilot ({len(pilot)}) and quantum ({len(quantum)}) lengths differ")
    segment = int(frame_length * samples_per_symbol)
    scale = np.sqrt(pilot.power())
    if not scale > 0:
        raise EstimatorError("pilot band carries no power")

    averages, trajectory, _ = run_cma(
        pilot.with_streams(pilot.x / scale, pilot.y / scale), cma, segment,
    )
    matrices = np.array([normalize_rotation(w) for w in averages])

    aligned_pilot = _apply_per_segment(pilot, matrices, segment)
    aligned_quantum = _apply_per_segment(quantum, matrices, segment)

    k = np.arange(min(len(pilot), 4096))
    ref = np.exp(-1j * 2 * np.pi * phase.pilot_freq / phase.sample_rate * k)
    init_phi = float(np.angle(np.mean(aligned_pilot.x[:k.shape[0]] * ref)))
    track = phase_ukf_run(aligned_pilot.x, replace(phase, init_phi=init_phi))

    stream = aligned_quantum.x * np.exp(-1j * track.at(len(quantum)))
    logger.debug("reference chain: %d segments, final phase %.4f rad", len(matrices), track.phi[-1])
    return ReferenceOutput(stream, matrices, trajectory, int(cma.trajectory_stride), track)


def run_reference(pilot, quantum, cma, phase, frame_length=FRAME_LENGTH, samples_per_symbol=1):
    """Compensated x-port stream of the reference chain"""
    return reference_chain(pilot, quantum, cma, phase, frame_length, samples_per_symbol).stream


def cma_weights_frame(trajectory, stride):
    """CMA row-1 weights over time; row 2 is determined by row 1"""
    return pd.DataFrame({
        "sample": np.arange(trajectory.shape[0]) * stride,
        "w11_re": trajectory[:, 0, 0].real,
        "w11_im": trajectory[:, 0, 0].imag,
        "w12_re": trajectory[:, 0, 1].real,
        "w12_im": trajectory[:, 0, 1].imag,
    })
