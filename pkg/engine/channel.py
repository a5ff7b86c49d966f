"""
Channel simulation
Time-varying polarization rotation and laser phase noise, attenuation and
frequency offset, followed by the receiver front-end (trusted loss, excess,
shot and electronic noise). All noise is generated directly in SNU.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from config.settings import (
    LINEWIDTH_TOTAL, LOSS_DB, FREQ_OFFSET, TRUSTED_LOSS_TAU,
    ELECTRONIC_NOISE, EXCESS_NOISE,
)
from utils.errors import ChannelError, ConfigError
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

THETA_KINDS = ("static", "linear_drift", "sinusoidal", "random_walk")


@dataclass
class ThetaModel:
    """
    Polarization rotation angle model.
    static: theta0; linear_drift: theta0 + rate*t (rad/s);
    sinusoidal: theta0 + amplitude*sin(2*pi*rate*t) (rate in Hz);
    random_walk: theta0 + cumulative N(0, step_variance) per sample.
    """

    kind: str = "static"
    theta0: float = 0.0
    rate: float = 0.0
    amplitude: float = 0.0
    step_variance: float = 0.0

    def validate(self, path="dynamics.theta_model"):
        if self.kind not in THETA_KINDS:
            raise ConfigError(f"{path}.kind", f"expected one of {THETA_KINDS}, got {self.kind!r}")
        for name in ("theta0", "rate", "amplitude", "step_variance"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{path}.{name}", "must be finite")
        if self.step_variance < 0:
            raise ConfigError(f"{path}.step_variance", "must be >= 0")


@dataclass
class ChannelDynamics:
    linewidth_total: float = LINEWIDTH_TOTAL
    theta_model: ThetaModel = field(default_factory=ThetaModel)
    freq_offset: float = FREQ_OFFSET
    loss_db: float = LOSS_DB

    @property
    def transmittance(self):
        return 10 ** (-self.loss_db / 10)

    def validate(self, path="dynamics"):
        if not self.linewidth_total >= 0:
            raise ConfigError(f"{path}.linewidth_total", "must be >= 0")
        if not math.isfinite(self.freq_offset):
            raise ConfigError(f"{path}.freq_offset", "must be finite")
        if not (math.isfinite(self.loss_db) and self.loss_db >= 0):
            raise ConfigError(f"{path}.loss_db", "must be a finite loss >= 0 dB")
        self.theta_model.validate(f"{path}.theta_model")


@dataclass
class NoiseConfig:
    excess_noise: float = EXCESS_NOISE
    electronic_noise: float = ELECTRONIC_NOISE
    trusted_loss_tau: float = TRUSTED_LOSS_TAU
    detector_gain_y: float = 1.0

    def validate(self, path="noise"):
        if not 0 < self.trusted_loss_tau <= 1:
            raise ConfigError(f"{path}.trusted_loss_tau", "must lie in (0, 1]")
        if self.excess_noise < 0:
            raise ConfigError(f"{path}.excess_noise", "must be >= 0")
        if self.electronic_noise < 0:
            raise ConfigError(f"{path}.electronic_noise", "must be >= 0")
        if self.detector_gain_y <= 0:
            raise ConfigError(f"{path}.detector_gain_y", "must be positive")


@dataclass
class ChannelTrace:
    """Per-sample ground truth of the channel"""

    theta: np.ndarray
    phi: np.ndarray
    loss_db: float
    freq_offset: float
    sample_rate: float
    seed: int

    def __len__(self):
        return self.theta.shape[0]

    def total_phase(self):
        """Wiener phase plus the frequency-offset ramp"""
        k = np.arange(len(self))
        return self.phi + 2 * np.pi * self.freq_offset / self.sample_rate * k

    def to_frame(self, decimation=1):
        index = np.arange(0, len(self), max(int(decimation), 1))
        return pd.DataFrame({
            "sample": index,
            "theta": self.theta[index],
            "phi": self.phi[index],
        })


def evolve_channel(n, dyn, sample_rate, seed):
    """
    Draw a channel trace: Wiener phase from a uniform start, theta from the model

    Args:
        n: number of samples
        dyn: ChannelDynamics
        sample_rate: Hz
        seed: PRNG seed

    Returns:
        ChannelTrace
    """
    if n <= 0:
        raise ChannelError(f"trace length must be positive, got {n}")
    dyn.validate()
    rng = make_rng(seed)

    phi0 = rng.uniform(-np.pi, np.pi)
    step_std = math.sqrt(2 * math.pi * dyn.linewidth_total / sample_rate)
    steps = rng.normal(0.0, step_std, n - 1)
    phi = phi0 + np.concatenate(([0.0], np.cumsum(steps)))

    model = dyn.theta_model
    t = np.arange(n) / sample_rate
    if model.kind == "static":
        theta = np.full(n, model.theta0, dtype=float)
    elif model.kind == "linear_drift":
        theta = model.theta0 + model.rate * t
    elif model.kind == "sinusoidal":
        theta = model.theta0 + model.amplitude * np.sin(2 * np.pi * model.rate * t)
    else:
        walk = rng.normal(0.0, math.sqrt(model.step_variance), n - 1)
        theta = model.theta0 + np.concatenate(([0.0], np.cumsum(walk)))

    return ChannelTrace(theta, phi, dyn.loss_db, dyn.freq_offset, sample_rate, seed)


def apply_channel(wf, trace):
    """
    E_rx = R(theta_k) E_tx exp(j(phi_k + 2 pi fo k/fs)) sqrt(10^(-loss/10)),
    R(theta) = [[cos, sin], [-sin, cos]]
    """
    if len(wf) != len(trace):
        raise ChannelError(f"waveform has {len(wf)} samples but trace has {len(trace)}")
    c = np.cos(trace.theta)
    s = np.sin(trace.theta)
    phase = np.exp(1j * trace.total_phase())
    if trace.loss_db:
        phase = phase * math.sqrt(10 ** (-trace.loss_db / 10))
    x = (c * wf.x + s * wf.y) * phase
    y = (-s * wf.x + c * wf.y) * phase
    return wf.with_streams(x, y)


def _complex_normal(rng, n, variance):
    """Complex Gaussian with the given variance per quadrature"""
    q = rng.standard_normal((2, n)) * math.sqrt(variance)
    return q[0] + 1j * q[1]


def _band_limit(noise, sample_rate, band):
    center, width = band
    freqs = np.fft.fftfreq(noise.shape[0], 1 / sample_rate)
    spectrum = np.fft.fft(noise)
    spectrum[np.abs(freqs - center) > width / 2] = 0
    return np.fft.ifft(spectrum)


def detect(wf, noise, seed, transmittance=1.0, signal_band=None, lo_on=True):
    """
    Heterodyne front-end in SNU: trusted loss, excess noise, shot noise, electronic noise.
    A shot-noise-only record has variance 1 per quadrature; the y detector gain is applied last.

    Args:
        wf: DualPolWaveform at the channel output
        noise: NoiseConfig
        seed: PRNG seed
        transmittance: channel T used to scale excess noise to T*xi per quadrature
        signal_band: (center Hz, width Hz) restricting the excess noise to the quantum band
        lo_on: False produces the electronic-noise-only calibration record

    Returns:
        DualPolWaveform
    """
    noise.validate()
    rng = make_rng(seed)
    n = len(wf)
    sqrt_tau = math.sqrt(noise.trusted_loss_tau)

    streams = []
    for stream in (wf.x, wf.y):
        out = np.array(stream, dtype=complex)
        if noise.excess_noise > 0:
            excess = _complex_normal(rng, n, transmittance * noise.excess_noise)
            if signal_band is not None:
                excess = _band_limit(excess, wf.sample_rate, signal_band)
            out = out + excess
        out = out * sqrt_tau
        if lo_on:
            out = out + _complex_normal(rng, n, 1.0)
        if noise.electronic_noise > 0:
            out = out + _complex_normal(rng, n, noise.electronic_noise)
        streams.append(out)

    x, y = streams
    if noise.detector_gain_y != 1.0:
        y = y * noise.detector_gain_y
    return wf.with_streams(x, y)
