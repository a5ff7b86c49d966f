"""
Transmitter
Gaussian-modulated symbols, RRC pulse shaping and pilot-tone multiplexing.
The launch is single polarization: the y stream is all zeros.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from config.settings import (
    SYMBOL_RATE, SAMPLE_RATE, RRC_ROLLOFF, RRC_SPAN, PILOT_FREQ,
    SIGNAL_CENTER_FREQ, PILOT_TO_SIGNAL_DB, MODULATION_VARIANCE,
)
from utils.errors import ConfigError, WaveformError
from utils.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass
class DualPolWaveform:
    """Two synchronized complex sample streams (x and y polarization)"""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise WaveformError(
                f"x and y must be 1-D and equal length, got {self.x.shape} and {self.y.shape}"
            )

    def __len__(self):
        return self.x.shape[0]

    def with_streams(self, x, y):
        return DualPolWaveform(x, y, self.sample_rate)

    def power(self):
        """Mean total power per sample, |E_x|^2 + |E_y|^2"""
        if len(self) == 0:
            return 0.0
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2))

    def to_bytes(self):
        """Interleaved little-endian float64 (re, im) pairs, x stream then y stream"""
        out = bytearray()
        for stream in (self.x, self.y):
            pairs = np.empty((len(self), 2), dtype="<f8")
            pairs[:, 0] = np.real(stream)
            pairs[:, 1] = np.imag(stream)
            out += pairs.tobytes()
        return bytes(out)

    @classmethod
    def from_bytes(cls, payload, sample_rate):
        values = np.frombuffer(payload, dtype="<f8")
        if values.size % 4:
            raise WaveformError("payload is not a whole number of dual-pol complex samples")
        pairs = values.reshape(2, -1, 2)
        x = pairs[0, :, 0] + 1j * pairs[0, :, 1]
        y = pairs[1, :, 0] + 1j * pairs[1, :, 1]
        return cls(x, y, sample_rate)

    def write(self, path):
        with open(path, "wb") as handle:
            handle.write(self.to_bytes())


@dataclass
class SymbolFrame:
    """Complex symbols in SNU with their nominal modulation variance"""

    symbols: np.ndarray
    modulation_variance: float

    def __len__(self):
        return self.symbols.shape[0]


@dataclass
class TxConfig:
    symbol_rate: float = SYMBOL_RATE
    sample_rate: float = SAMPLE_RATE
    rrc_rolloff: float = RRC_ROLLOFF
    rrc_span: int = RRC_SPAN
    pilot_freq: float = PILOT_FREQ
    signal_center_freq: float = SIGNAL_CENTER_FREQ
    pilot_to_signal_power_ratio: float = 10 ** (PILOT_TO_SIGNAL_DB / 10)
    modulation_variance: float = MODULATION_VARIANCE
    seed: int = 0

    @property
    def samples_per_symbol(self):
        return int(round(self.sample_rate / self.symbol_rate))

    @property
    def signal_bandwidth(self):
        return self.symbol_rate * (1 + self.rrc_rolloff)

    def validate(self, path="tx"):
        if self.symbol_rate <= 0 or self.sample_rate <= 0:
            raise ConfigError(f"{path}.symbol_rate", "rates must be positive")
        ratio = self.sample_rate / self.symbol_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 2:
            raise ConfigError(
                f"{path}.sample_rate",
                f"must be an integer multiple (>= 2) of symbol_rate, got ratio {ratio:g}",
            )
        if not 0 < self.rrc_rolloff <= 1:
            raise ConfigError(f"{path}.rrc_rolloff", "must lie in (0, 1]")
        if self.rrc_span < 4:
            raise ConfigError(f"{path}.rrc_span", "must be at least 4 symbols")
        if self.modulation_variance <= 0:
            raise ConfigError(f"{path}.modulation_variance", "must be positive")
        if self.pilot_to_signal_power_ratio <= 0:
            raise ConfigError(f"{path}.pilot_to_signal_power_ratio", "must be positive")
        try:
            check_band_plan(self)
        except WaveformError as e:
            raise ConfigError(f"{path}.pilot_freq", str(e)) from e


def check_band_plan(cfg):
    """Pilot line and signal band must be disjoint and inside the Nyquist band"""
    half_band = cfg.signal_bandwidth / 2
    nyquist = cfg.sample_rate / 2
    if abs(cfg.pilot_freq - cfg.signal_center_freq) <= half_band:
        raise WaveformError(
            f"pilot at {cfg.pilot_freq * 1e-6:.3f} MHz falls inside the signal band "
            f"{(cfg.signal_center_freq - half_band) * 1e-6:.3f}-"
            f"{(cfg.signal_center_freq + half_band) * 1e-6:.3f} MHz"
        )
    if abs(cfg.signal_center_freq) + half_band >= nyquist or abs(cfg.pilot_freq) >= nyquist:
        raise WaveformError(f"bands exceed the Nyquist frequency {nyquist * 1e-6:.3f} MHz")


def generate_symbols(n, v_mod, seed):
    """
    Circular complex Gaussian symbols, each quadrature with variance v_mod/2

    Args:
        n: number of symbols
        v_mod: modulation variance in SNU
        seed: PRNG seed

    Returns:
        SymbolFrame
    """
    if n < 0:
        raise WaveformError(f"symbol count must be >= 0, got {n}")
    if not v_mod > 0:
        raise WaveformError(f"modulation variance must be positive, got {v_mod}")
    rng = make_rng(seed)
    quadratures = rng.standard_normal((2, int(n))) * math.sqrt(v_mod / 2)
    return SymbolFrame(quadratures[0] + 1j * quadratures[1], float(v_mod))


def rrc_taps(rolloff, span, samples_per_symbol):
    """
    Root raised cosine taps with unit energy

    Args:
        rolloff: excess bandwidth in (0, 1]
        span: filter length in symbols
        samples_per_symbol: oversampling factor

    Returns:
        odd-length symmetric float64 array
    """
    if not 0 < rolloff <= 1:
        raise WaveformError(f"rolloff must lie in (0, 1], got {rolloff}")
    if span < 4 or samples_per_symbol < 2:
        raise WaveformError("span must be >= 4 symbols and samples_per_symbol >= 2")

    n_taps = 2 * ((span * samples_per_symbol) // 2) + 1
    center = (n_taps - 1) // 2
    # |t| in symbol periods; the pulse is even so symmetry is exact
    t = np.abs(np.arange(n_taps) - center) / samples_per_symbol
    beta = rolloff

    taps = np.empty(n_taps)
    at_zero = t == 0
    at_edge = np.isclose(t, 1 / (4 * beta), rtol=0, atol=1e-12)
    regular = ~(at_zero | at_edge)

    taps[at_zero] = 1 - beta + 4 * beta / np.pi
    taps[at_edge] = (beta / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
    )
    tr = t[regular]
    taps[regular] = (
        np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    ) / (np.pi * tr * (1 - (4 * beta * tr) ** 2))

    return taps / np.sqrt(np.sum(taps ** 2))


def shape_symbols(symbols, taps, sps):
    """Zero-stuff to sps and filter ('full' mode: symbol k peaks at k*sps + (len(taps)-1)/2)"""
    upsampled = np.zeros(len(symbols) * sps, dtype=complex)
    upsampled[::sps] = symbols
    return fftconvolve(upsampled, taps)


def build_waveform(frame, cfg):
    """
    Shaped symbols upconverted to the signal center plus a complex pilot tone on x;
    y stays identically zero.

    Args:
        frame: SymbolFrame
        cfg: TxConfig

    Returns:
        DualPolWaveform
    """
    cfg.validate()
    if len(frame) == 0:
        raise WaveformError("cannot build a waveform from an empty symbol frame")
    check_band_plan(cfg)

    sps = cfg.samples_per_symbol
    taps = rrc_taps(cfg.rrc_rolloff, cfg.rrc_span, sps)
    shaped = shape_symbols(frame.symbols, taps, sps)

    k = np.arange(shaped.shape[0])
    signal = shaped * np.exp(2j * np.pi * cfg.signal_center_freq / cfg.sample_rate * k)

    # Nominal shaped power is v_mod/sps (unit-energy taps, one symbol per sps samples)
    signal_power = frame.modulation_variance / sps
    pilot_amplitude = math.sqrt(cfg.pilot_to_signal_power_ratio * signal_power)
    pilot = pilot_amplitude * np.exp(2j * np.pi * cfg.pilot_freq / cfg.sample_rate * k)

    logger.debug(
        "waveform: %d symbols, %d samples, sps=%d, pilot amplitude %.4f",
        len(frame), shaped.shape[0], sps, pilot_amplitude,
    )
    return DualPolWaveform(signal + pilot, np.zeros_like(signal), cfg.sample_rate)
