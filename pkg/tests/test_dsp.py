import numpy as np
import pytest

from collectors.txgen import DualPolWaveform, build_waveform, generate_symbols, rrc_taps, shape_symbols
from pipelines.dsp import (
    BandPlan, DspConfig, SymbolRecord, calibrate_snu, channel_balance, estimate_frequency_offset,
    evm, find_timing_offset, isolate_bands, matched_filter_downsample, noise_floor, normalize_channels,
    pilot_power, power_spectrum, segment_frames,
)
from utils.errors import BandOverlapError, CalibrationError, DspError, PilotNotFoundError
from tests.conftest import tone


def _alternating(n, amplitude):
    signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return amplitude * (signs + 1j * signs)


def test_calibration_scale():
    record = calibrate_snu(_alternating(1000, np.sqrt(2.0)), _alternating(1000, np.sqrt(0.5)))
    assert record.shot_variance_raw == pytest.approx(2.0, abs=1e-12)
    assert record.snu_scale == pytest.approx(1 / 1.5, abs=1e-12)
    assert record.electronic_noise_snu == pytest.approx(1 / 3, abs=1e-12)


def test_calibration_rejects_bad_records():
    with pytest.raises(CalibrationError):
        calibrate_snu(_alternating(100, 1.0), _alternating(100, 2.0))
    with pytest.raises(CalibrationError):
        calibrate_snu(np.array([]), _alternating(100, 0.1))


def test_frequency_offset_estimate(rng):
    n, fs = 2 ** 20, 120e6
    x = tone(n, 48e6 + 123.4, fs, amplitude=3.0) + 0.1 * (
        rng.standard_normal(n) + 1j * rng.standard_normal(n)
    )
    wf = DualPolWaveform(x, np.zeros(n, dtype=complex), fs)
    assert estimate_frequency_offset(wf, 48e6, 1e6) == pytest.approx(123.4, abs=100)


def test_frequency_offset_sees_both_polarizations():
    n, fs = 2 ** 16, 120e6
    y = tone(n, 48e6 - 5e3, fs)
    wf = DualPolWaveform(np.zeros(n, dtype=complex), y, fs)
    assert estimate_frequency_offset(wf, 48e6, 1e6) == pytest.approx(-5e3, abs=500)


def test_missing_pilot():
    wf = DualPolWaveform(np.zeros(4096, dtype=complex), np.zeros(4096, dtype=complex), 120e6)
    with pytest.raises(PilotNotFoundError):
        estimate_frequency_offset(wf, 48e6, 1e6)


def test_band_overlap(desk_tx):
    plan = BandPlan(37.5e6, 25e6, 20e6, 0.2, 120e6, pilot_bandwidth=2e6)
    assert plan.guard == pytest.approx(-0.5e6)
    wf = DualPolWaveform(np.zeros(64, dtype=complex), np.zeros(64, dtype=complex), 120e6)
    with pytest.raises(BandOverlapError):
        isolate_bands(wf, plan)
    assert BandPlan.from_config(desk_tx, DspConfig()).guard == pytest.approx(10e6)


def _core_power(stream, trim):
    return float(np.mean(np.abs(stream[trim:-trim]) ** 2))


def test_bands_do_not_leak_into_each_other(desk_tx):
    plan = BandPlan.from_config(desk_tx, DspConfig())
    trim = max(len(plan.pilot_filter()), len(plan.quantum_filter()))
    n = 2 ** 16
    silent = np.zeros(n, dtype=complex)

    fs = desk_tx.sample_rate
    pilot_only = DualPolWaveform(tone(n, desk_tx.pilot_freq, fs), silent, fs)
    pilot, quantum = isolate_bands(pilot_only, plan)
    assert 10 * np.log10(_core_power(quantum.x, trim) / _core_power(pilot.x, trim)) < -40

    sps = desk_tx.samples_per_symbol
    symbols = generate_symbols(n // sps, 1.65, seed=2).symbols
    shaped = shape_symbols(symbols, rrc_taps(desk_tx.rrc_rolloff, desk_tx.rrc_span, sps), sps)
    signal = shaped * tone(len(shaped), desk_tx.signal_center_freq, fs)
    signal_only = DualPolWaveform(signal, np.zeros_like(signal), fs)
    pilot, quantum = isolate_bands(signal_only, plan)
    assert 10 * np.log10(_core_power(pilot.x, trim) / _core_power(quantum.x, trim)) < -40


def test_back_to_back_symbols(desk_tx):
    frame = generate_symbols(5000, 1.65, seed=21)
    wf = build_waveform(frame, desk_tx)
    plan = BandPlan.from_config(desk_tx, DspConfig())
    pilot, quantum = isolate_bands(wf, plan)

    sps = desk_tx.samples_per_symbol
    taps = rrc_taps(desk_tx.rrc_rolloff, desk_tx.rrc_span, sps)
    rx = matched_filter_downsample(quantum.x, taps, sps)
    assert rx.shape == frame.symbols.shape
    # record edges carry the pilot switch-on transient
    core = slice(64, -64)
    assert evm(frame.symbols[core], rx[core]) < 1e-3

    expected = desk_tx.pilot_to_signal_power_ratio * 1.65 / sps
    assert pilot_power(pilot, 0.0, plan) == pytest.approx(expected, rel=0.01)
    assert pilot.power() + quantum.power() == pytest.approx(wf.power(), rel=0.01)


def test_matched_filter_length_and_checks():
    taps = rrc_taps(0.2, 8, 4)
    assert len(taps) == 33
    assert matched_filter_downsample(np.zeros(1000, dtype=complex), taps, 4).shape == (242,)
    with pytest.raises(DspError):
        matched_filter_downsample(np.zeros(10, dtype=complex), taps, 4)
    with pytest.raises(DspError):
        matched_filter_downsample(np.zeros(1000, dtype=complex), taps, 4, timing_offset=4)


def test_timing_offset_recovery(rng):
    sps = 4
    taps = rrc_taps(0.2, 16, sps)
    symbols = rng.standard_normal(2000) + 1j * rng.standard_normal(2000)
    shaped = np.concatenate((np.zeros(2, dtype=complex), shape_symbols(symbols, taps, sps)))
    assert find_timing_offset(shaped, taps, sps) == 2


def test_evm_of_identical_streams_is_zero():
    ref = np.array([1 + 1j, -1 + 0.5j])
    assert evm(ref, ref) == 0.0
    assert evm(ref, 1.1 * ref) == pytest.approx(0.1)


def test_noise_floor_level(rng):
    n, fs = 2 ** 18, 1e8
    scale = np.sqrt(0.7)
    wf = DualPolWaveform(
        scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
        scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n)),
        fs,
    )
    assert noise_floor(wf) == pytest.approx(0.7, rel=0.02)
    with pytest.raises(DspError):
        noise_floor(wf, band=(0.6 * fs, 0.7 * fs))


def test_channel_balance(rng):
    x = rng.standard_normal(8192) + 1j * rng.standard_normal(8192)
    assert channel_balance(DualPolWaveform(x, x, 1e8), 4e7) == pytest.approx(1.0, abs=1e-12)
    assert channel_balance(DualPolWaveform(x, 0.5 * x, 1e8), 4e7) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(DspError):
        channel_balance(DualPolWaveform(x, x, 1e8), 6e7)
    with pytest.raises(DspError):
        channel_balance(DualPolWaveform(x, np.zeros_like(x), 1e8), 4e7)


def test_normalize_channels(rng):
    x = rng.standard_normal(8192) + 1j * rng.standard_normal(8192)
    equal = normalize_channels(DualPolWaveform(x, x, 1e8), 4e7)
    assert np.allclose(equal.y, x, atol=1e-12)
    balanced = normalize_channels(DualPolWaveform(x, 0.5 * x, 1e8), 4e7)
    assert np.allclose(balanced.y, x, atol=1e-12)
    assert np.array_equal(balanced.x, x)

    # the balance comes from the reference record, not the one being scaled
    reference = DualPolWaveform(x, 0.25 * x, 1e8)
    scaled = normalize_channels(DualPolWaveform(x, 0.5 * x, 1e8), 4e7, reference=reference)
    assert np.allclose(scaled.y, 2 * x, atol=1e-12)


def test_segment_frames():
    zeros = np.zeros(490_000, dtype=complex)
    frames = segment_frames(SymbolRecord(zeros, zeros, 10_000))
    assert len(frames) == 49
    assert all(len(f) == 10_000 for f in frames)
    assert len(segment_frames(SymbolRecord(zeros[:25_000], zeros[:25_000], 10_000))) == 2
    assert segment_frames(SymbolRecord(zeros[:9_999], zeros[:9_999], 10_000)) == []


def test_symbol_record_length_mismatch():
    with pytest.raises(DspError):
        SymbolRecord(np.zeros(3), np.zeros(4))


def test_power_spectrum_layout(rng):
    n = 8192
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    spectrum = power_spectrum(DualPolWaveform(x, x, 1e6), nperseg=256)
    assert list(spectrum.columns) == ["freq_hz", "psd_db_x", "psd_db_y"]
    assert len(spectrum) == 256
    assert spectrum["freq_hz"].is_monotonic_increasing
    assert np.allclose(spectrum["psd_db_x"], spectrum["psd_db_y"])
