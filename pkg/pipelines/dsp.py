"""
Receiver DSP
SNU calibration, pilot frequency estimation, band isolation, matched filtering,
polarization power balancing and framing. Everything here is deterministic.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.fft import fft, fftfreq, next_fast_len
from scipy.signal import fftconvolve, firwin, get_window, kaiserord, welch

from config.settings import (
    PILOT_BANDWIDTH, PILOT_SEARCH_BW, NORMALIZE_BANDWIDTH, STOPBAND_DB,
    CALIBRATION_SAMPLES, SPECTRUM_SEGMENT, PEAK_THRESHOLD_DB, FRAME_LENGTH,
)
from utils.errors import (
    BandOverlapError, CalibrationError, ConfigError, DspError, PilotNotFoundError,
)

logger = logging.getLogger(__name__)

# Frequency estimation works on at most this many samples
MAX_FO_SAMPLES = 2 ** 22


@dataclass
class DspConfig:
    pilot_bandwidth: float = PILOT_BANDWIDTH
    search_bw: float = PILOT_SEARCH_BW
    normalize_bandwidth: float = NORMALIZE_BANDWIDTH
    stopband_db: float = STOPBAND_DB
    calibration_samples: int = CALIBRATION_SAMPLES
    spectrum_segment: int = SPECTRUM_SEGMENT
    peak_threshold_db: float = PEAK_THRESHOLD_DB

    def validate(self, path="dsp"):
        for name in ("pilot_bandwidth", "search_bw", "normalize_bandwidth"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{path}.{name}", "must be positive")
        if self.stopband_db < 60:
            raise ConfigError(f"{path}.stopband_db", "must be at least 60 dB")
        if self.calibration_samples < 1024:
            raise ConfigError(f"{path}.calibration_samples", "must be at least 1024")
        if self.spectrum_segment < 16:
            raise ConfigError(f"{path}.spectrum_segment", "must be at least 16")


@dataclass
class CalibrationRecord:
    shot_variance_raw: float
    electronic_variance_raw: float
    snu_scale: float

    @property
    def electronic_noise_snu(self):
        return self.electronic_variance_raw * self.snu_scale


@dataclass
class SymbolRecord:
    """Aligned transmitted/received symbols in SNU"""

    tx_symbols: np.ndarray
    rx_symbols: np.ndarray
    frame_length: int = FRAME_LENGTH

    def __post_init__(self):
        if len(self.tx_symbols) != len(self.rx_symbols):
            raise DspError(
                f"tx and rx symbol counts differ: {len(self.tx_symbols)} vs {len(self.rx_symbols)}"
            )

    def __len__(self):
        return len(self.tx_symbols)


@dataclass
class BandPlan:
    """Where the pilot and the quantum band sit after frequency-offset correction"""

    pilot_freq: float
    signal_center_freq: float
    symbol_rate: float
    rolloff: float
    sample_rate: float
    pilot_bandwidth: float = PILOT_BANDWIDTH
    stopband_db: float = STOPBAND_DB

    @classmethod
    def from_config(cls, tx, dsp, freq_offset=0.0):
        return cls(
            pilot_freq=tx.pilot_freq + freq_offset,
            signal_center_freq=tx.signal_center_freq + freq_offset,
            symbol_rate=tx.symbol_rate,
            rolloff=tx.rrc_rolloff,
            sample_rate=tx.sample_rate,
            pilot_bandwidth=dsp.pilot_bandwidth,
            stopband_db=dsp.stopband_db,
        )

    @property
    def signal_half_band(self):
        return self.symbol_rate * (1 + self.rolloff) / 2

    @property
    def guard(self):
        """Free spectrum between the quantum band edge and the pilot filter edge"""
        return (abs(self.pilot_freq - self.signal_center_freq)
                - self.signal_half_band - self.pilot_bandwidth / 2)

    def quantum_filter(self):
        transition = 0.5 * self.guard
        return design_lowpass(self.signal_half_band + transition / 2, transition,
                              self.sample_rate, self.stopband_db)

    def pilot_filter(self):
        transition = 0.5 * self.guard
        return design_lowpass(self.pilot_bandwidth / 2 + transition / 2, transition,
                              self.sample_rate, self.stopband_db)


def quadrature_variance(stream):
    """Variance per quadrature; real streams are their own single quadrature"""
    stream = np.asarray(stream)
    if np.iscomplexobj(stream):
        return 0.5 * (np.var(stream.real) + np.var(stream.imag))
    return float(np.var(stream))


def calibrate_snu(shot_run, elec_run):
    """
    Shot-noise unit calibration from an LO-only record and a lasers-off record

    Args:
        shot_run: samples with only the LO on (shot + electronic noise)
        elec_run: samples with all lasers off (electronic noise)

    Returns:
        CalibrationRecord with snu_scale = 1 / (shot - elec)
    """
    if len(shot_run) == 0 or len(elec_run) == 0:
        raise CalibrationError("calibration records must be non-empty")
    shot = quadrature_variance(shot_run)
    elec = quadrature_variance(elec_run)
    if elec >= shot:
        raise CalibrationError(
            f"electronic variance {elec:.6g} is not below shot variance {shot:.6g}"
        )
    record = CalibrationRecord(float(shot), float(elec), float(1.0 / (shot - elec)))
    logger.debug("calibration: shot=%.6g elec=%.6g scale=%.6g v_el=%.6g SNU",
                 shot, elec, record.snu_scale, record.electronic_noise_snu)
    return record


def apply_calibration(wf, record):
    """Rescale raw amplitudes so that variances are in SNU"""
    gain = np.sqrt(record.snu_scale)
    return wf.with_streams(wf.x * gain, wf.y * gain)


def estimate_frequency_offset(wf, expected_pilot, search_bw, threshold_db=PEAK_THRESHOLD_DB):
    """
    Pilot frequency offset from the summed periodogram of both polarizations.
    Hann window, zero padding, parabolic interpolation of the log power around the peak.

    Args:
        wf: DualPolWaveform containing the pilot
        expected_pilot: nominal pilot frequency (Hz)
        search_bw: half-width of the search window (Hz)
        threshold_db: minimum peak height over the median floor

    Returns:
        estimated pilot frequency minus expected_pilot (Hz)
    """
    n = min(len(wf), MAX_FO_SAMPLES)
    if n < 8:
        raise PilotNotFoundError("record too short for a frequency estimate")
    fs = wf.sample_rate
    pad = 4 if n <= 2 ** 20 else 2
    nfft = next_fast_len(pad * n)
    window = get_window("hann", n)

    power = np.abs(fft(wf.x[:n] * window, nfft)) ** 2
    power += np.abs(fft(wf.y[:n] * window, nfft)) ** 2
    freqs = fftfreq(nfft, 1 / fs)

    candidates = np.flatnonzero(np.abs(freqs - expected_pilot) <= search_bw)
    if candidates.size == 0:
        raise PilotNotFoundError(
            f"no frequency bins within {search_bw:g} Hz of {expected_pilot:g} Hz"
        )
    k = candidates[np.argmax(power[candidates])]
    peak = power[k]
    floor = np.median(power)
    if peak <= 0 or (floor > 0 and 10 * np.log10(peak / floor) < threshold_db):
        raise PilotNotFoundError(
            f"no pilot above the noise floor + {threshold_db:g} dB near {expected_pilot * 1e-6:.3f} MHz"
        )

    tiny = np.finfo(float).tiny
    a, b, c = (np.log(max(power[(k + d) % nfft], tiny)) for d in (-1, 0, 1))
    curvature = a - 2 * b + c
    delta = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
    estimate = freqs[k] + delta * fs / nfft
    logger.debug("pilot peak at %.3f Hz (offset %.3f Hz)", estimate, estimate - expected_pilot)
    return float(estimate - expected_pilot)


def design_lowpass(cutoff, transition, sample_rate, stopband_db=STOPBAND_DB):
    """Odd-length Kaiser-windowed sinc lowpass with unit DC gain"""
    if transition <= 0 or cutoff <= 0 or cutoff >= sample_rate / 2:
        raise DspError(f"cannot design lowpass: cutoff {cutoff:g} Hz, transition {transition:g} Hz")
    numtaps, beta = kaiserord(stopband_db, transition / (sample_rate / 2))
    numtaps |= 1
    return firwin(numtaps, cutoff, window=("kaiser", beta), fs=sample_rate)


def _shift(stream, freq, sample_rate):
    k = np.arange(stream.shape[0])
    return stream * np.exp(2j * np.pi * freq / sample_rate * k)


def _lowpass(stream, taps):
    # Odd symmetric taps in 'same' mode: zero group delay
    return fftconvolve(stream, taps, mode="same")


def isolate_bands(wf, plan):
    """
    Split the detected record into the pilot band (analytic passband at the pilot
    frequency; its real part is the real pilot measurement) and the quantum band
    downconverted to complex baseband. Both keep the dual-pol structure.

    Args:
        wf: detected DualPolWaveform
        plan: BandPlan with offset-corrected frequencies

    Returns:
        (pilot_band, quantum_band) DualPolWaveforms
    """
    if plan.guard <= 0:
        raise BandOverlapError(
            f"pilot at {plan.pilot_freq * 1e-6:.3f} MHz overlaps the quantum band around "
            f"{plan.signal_center_freq * 1e-6:.3f} MHz"
        )
    fs = wf.sample_rate
    pilot_taps = plan.pilot_filter()
    quantum_taps = plan.quantum_filter()

    pilot, quantum = [], []
    for stream in (wf.x, wf.y):
        base = _lowpass(_shift(stream, -plan.pilot_freq, fs), pilot_taps)
        pilot.append(_shift(base, plan.pilot_freq, fs))
        quantum.append(_lowpass(_shift(stream, -plan.signal_center_freq, fs), quantum_taps))

    logger.debug("band split: pilot filter %d taps, quantum filter %d taps",
                 len(pilot_taps), len(quantum_taps))
    return wf.with_streams(*pilot), wf.with_streams(*quantum)


def noise_floor(wf, band=None, nperseg=SPECTRUM_SEGMENT):
    """
    Per-quadrature white-noise variance measured out of band

    Args:
        wf: detected DualPolWaveform
        band: (low, high) Hz; defaults to the negative-frequency half, which carries no signal
        nperseg: Welch segment length

    Returns:
        variance per quadrature per sample (SNU)
    """
    fs = wf.sample_rate
    low, high = band if band is not None else (-0.45 * fs, -0.05 * fs)
    levels = []
    for stream in (wf.x, wf.y):
        freqs, psd = welch(stream, fs=fs, nperseg=min(nperseg, len(wf)),
                           return_onesided=False, scaling="density")
        sel = (freqs >= low) & (freqs <= high)
        if not np.any(sel):
            raise DspError(f"noise band {low:g}..{high:g} Hz contains no bins")
        levels.append(np.mean(psd[sel]))
    # complex white noise: two-sided density = 2 sigma^2 / fs
    return float(np.mean(levels) * fs / 2)


def pilot_power(pilot_band, noise_var, plan):
    """Pilot power |E_x|^2 + |E_y|^2 with the in-band noise removed"""
    noise_gain = float(np.sum(plan.pilot_filter() ** 2))
    in_band_noise = 2 * 2 * noise_var * noise_gain
    return max(pilot_band.power() - in_band_noise, np.finfo(float).eps)


def matched_filter_downsample(stream, taps, sps, timing_offset=0):
    """
    RRC matched filter followed by symbol-rate sampling

    Args:
        stream: complex baseband samples (one port)
        taps: RRC taps from rrc_taps
        sps: integer samples per symbol
        timing_offset: integer sample offset in [0, sps)

    Returns:
        floor((len(stream) - (len(taps) - 1)) / sps) symbols
    """
    stream = np.asarray(stream)
    n_taps = len(taps)
    if stream.shape[0] < n_taps:
        raise DspError(f"stream of {stream.shape[0]} samples is shorter than the {n_taps}-tap filter")
    if not 0 <= timing_offset < sps:
        raise DspError(f"timing offset {timing_offset} outside [0, {sps})")
    delay = n_taps - 1
    count = (stream.shape[0] - delay) // sps
    filtered = fftconvolve(stream, taps)
    start = delay + timing_offset
    return filtered[start:start + count * sps:sps][:count]


def find_timing_offset(stream, taps, sps):
    """Integer offset maximizing the matched-filter output variance"""
    filtered = fftconvolve(np.asarray(stream), taps)
    delay = len(taps) - 1
    count = (len(stream) - delay) // sps
    if count <= 0:
        raise DspError("stream too short for timing recovery")
    variances = [
        np.var(filtered[delay + t:delay + t + count * sps:sps]) for t in range(sps)
    ]
    return int(np.argmax(variances))


def evm(reference, received):
    """RMS error vector magnitude relative to the reference power"""
    reference = np.asarray(reference)
    return float(np.sqrt(np.mean(np.abs(received - reference) ** 2)
                         / np.mean(np.abs(reference) ** 2)))


def _band_power(stream, sample_rate, bandwidth):
    spectrum = np.abs(fft(stream)) ** 2
    freqs = fftfreq(stream.shape[0], 1 / sample_rate)
    return float(np.sum(spectrum[(freqs >= 0) & (freqs <= bandwidth)]))


def channel_balance(wf, bandwidth):
    """Amplitude factor for y that equalizes the [0, bandwidth] power of both polarizations"""
    if bandwidth > wf.sample_rate / 2:
        raise DspError(
            f"balancing bandwidth {bandwidth:g} Hz exceeds Nyquist {wf.sample_rate / 2:g} Hz"
        )
    px = _band_power(wf.x, wf.sample_rate, bandwidth)
    py = _band_power(wf.y, wf.sample_rate, bandwidth)
    if px <= 0 or py <= 0:
        raise DspError("cannot balance a polarization with zero power")
    return float(np.sqrt(px / py))


def normalize_channels(wf, bandwidth=NORMALIZE_BANDWIDTH, reference=None):
    """
    Scale y so both polarizations carry equal power over [0, bandwidth]

    Args:
        wf: DualPolWaveform to rescale
        bandwidth: balancing band (Hz)
        reference: record the balance is measured on (defaults to wf itself)
    """
    scale = channel_balance(wf if reference is None else reference, bandwidth)
    return wf.with_streams(wf.x, wf.y * scale)


def segment_frames(record):
    """Consecutive non-overlapping frames; the trailing partial frame is dropped"""
    if record.frame_length <= 0:
        raise DspError(f"frame length must be positive, got {record.frame_length}")
    length = record.frame_length
    return [
        SymbolRecord(record.tx_symbols[i:i + length], record.rx_symbols[i:i + length], length)
        for i in range(0, (len(record) // length) * length, length)
    ]


def power_spectrum(wf, nperseg=SPECTRUM_SEGMENT):
    """Two-sided Welch PSD of both polarizations, in dB, ordered by frequency"""
    frames = {}
    freqs = None
    for name, stream in (("x", wf.x), ("y", wf.y)):
        freqs, psd = welch(stream, fs=wf.sample_rate, nperseg=min(nperseg, len(wf)),
                           return_onesided=False, scaling="density")
        frames[f"psd_db_{name}"] = 10 * np.log10(np.maximum(psd, np.finfo(float).tiny))
    order = np.argsort(freqs)
    return pd.DataFrame({
        "freq_hz": freqs[order],
        "psd_db_x": frames["psd_db_x"][order],
        "psd_db_y": frames["psd_db_y"][order],
    })
