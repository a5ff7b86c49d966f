import math

import numpy as np
import pytest

from collectors.txgen import DualPolWaveform
from engine.channel import (
    ChannelDynamics, NoiseConfig, ThetaModel, apply_channel, detect, evolve_channel,
)
from utils.errors import ChannelError, ConfigError


def test_transmittance_from_loss():
    assert ChannelDynamics(loss_db=5.5).transmittance == pytest.approx(0.2818, abs=1e-4)
    assert ChannelDynamics(loss_db=0.0).transmittance == 1.0


def test_wiener_increment_variance():
    dyn = ChannelDynamics(linewidth_total=200.0)
    trace = evolve_channel(1_000_000, dyn, 1e9, seed=11)
    expected = 2 * math.pi * 200.0 / 1e9
    assert np.var(np.diff(trace.phi)) == pytest.approx(expected, rel=0.01)
    assert -math.pi <= trace.phi[0] < math.pi


def test_zero_linewidth_keeps_phase():
    trace = evolve_channel(1000, ChannelDynamics(linewidth_total=0.0), 1e6, seed=1)
    assert np.all(trace.phi == trace.phi[0])


def test_theta_models():
    fs = 1e6
    static = evolve_channel(100, ChannelDynamics(theta_model=ThetaModel("static", 0.3)), fs, 0)
    assert np.all(static.theta == 0.3)

    drift = ThetaModel("linear_drift", theta0=0.1, rate=2.0)
    trace = evolve_channel(1001, ChannelDynamics(theta_model=drift), fs, 0)
    assert trace.theta[-1] == pytest.approx(0.1 + 2.0 * 1000 / fs)

    sine = ThetaModel("sinusoidal", theta0=0.0, amplitude=0.5, rate=1000.0)
    trace = evolve_channel(1000, ChannelDynamics(theta_model=sine), fs, 0)
    assert np.max(trace.theta) == pytest.approx(0.5, abs=1e-4)

    walk = ThetaModel("random_walk", theta0=0.2, step_variance=1e-6)
    trace = evolve_channel(100_000, ChannelDynamics(theta_model=walk), fs, 0)
    assert trace.theta[0] == 0.2
    assert np.var(np.diff(trace.theta)) == pytest.approx(1e-6, rel=0.03)


def test_trace_is_reproducible():
    dyn = ChannelDynamics()
    a = evolve_channel(500, dyn, 1e9, seed=5)
    b = evolve_channel(500, dyn, 1e9, seed=5)
    assert np.array_equal(a.phi, b.phi)


def test_invalid_dynamics():
    with pytest.raises(ConfigError, match="theta_model.kind"):
        evolve_channel(10, ChannelDynamics(theta_model=ThetaModel("spiral")), 1e6, 0)
    with pytest.raises(ConfigError):
        evolve_channel(10, ChannelDynamics(loss_db=-1.0), 1e6, 0)
    with pytest.raises(ChannelError):
        evolve_channel(0, ChannelDynamics(), 1e6, 0)


def test_apply_channel_rotates_and_attenuates(rng):
    n = 4096
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    wf = DualPolWaveform(x, np.zeros(n, dtype=complex), 1e6)

    lossless = ChannelDynamics(
        linewidth_total=100.0, loss_db=0.0, theta_model=ThetaModel("static", 0.7),
    )
    out = apply_channel(wf, evolve_channel(n, lossless, 1e6, seed=2))
    assert out.power() == pytest.approx(wf.power(), rel=1e-12)
    assert np.allclose(np.abs(out.y / out.x), math.tan(0.7))

    lossy = ChannelDynamics(linewidth_total=0.0, loss_db=5.5)
    out = apply_channel(wf, evolve_channel(n, lossy, 1e6, seed=2))
    assert out.power() == pytest.approx(wf.power() * lossy.transmittance, rel=1e-12)


def test_identity_channel():
    wf = DualPolWaveform(np.ones(8, dtype=complex), np.zeros(8, dtype=complex), 1e6)
    dyn = ChannelDynamics(linewidth_total=0.0, loss_db=0.0)
    trace = evolve_channel(8, dyn, 1e6, seed=0)
    out = apply_channel(wf, trace)
    assert np.allclose(out.x, np.exp(1j * trace.phi[0]))
    assert np.allclose(out.y, 0.0)


def test_apply_channel_length_mismatch():
    wf = DualPolWaveform(np.zeros(4), np.zeros(4), 1e6)
    trace = evolve_channel(5, ChannelDynamics(), 1e6, seed=0)
    with pytest.raises(ChannelError):
        apply_channel(wf, trace)


def _silence(n, fs=1e8):
    return DualPolWaveform(np.zeros(n, dtype=complex), np.zeros(n, dtype=complex), fs)


def test_shot_noise_is_one_snu():
    out = detect(_silence(2 ** 18), NoiseConfig(electronic_noise=0.01), seed=3)
    assert np.var(out.x.real) == pytest.approx(1.01, abs=0.015)
    assert np.var(out.y.imag) == pytest.approx(1.01, abs=0.015)


def test_lo_off_leaves_electronic_noise():
    out = detect(_silence(2 ** 18), NoiseConfig(electronic_noise=0.01), seed=3, lo_on=False)
    assert np.var(out.x.real) == pytest.approx(0.01, abs=5e-4)


def test_trusted_loss_scales_signal():
    wf = DualPolWaveform(np.full(16, 2.0 + 0j), np.zeros(16, dtype=complex), 1e6)
    noise = NoiseConfig(electronic_noise=0.0, trusted_loss_tau=0.25)
    out = detect(wf, noise, seed=0, lo_on=False)
    assert np.allclose(out.x, 1.0)


def test_detector_gain_on_y():
    noise = NoiseConfig(electronic_noise=0.0, detector_gain_y=2.0)
    out = detect(_silence(2 ** 17), noise, seed=4)
    ratio = np.var(out.y.real) / np.var(out.x.real)
    assert ratio == pytest.approx(4.0, rel=0.03)


def test_excess_noise_is_band_limited():
    fs = 1e8
    noise = NoiseConfig(excess_noise=0.5, electronic_noise=0.0)
    out = detect(
        _silence(2 ** 16, fs), noise, seed=9, transmittance=1.0,
        signal_band=(0.15 * fs, 0.2 * fs), lo_on=False,
    )
    assert np.var(out.x.real) == pytest.approx(0.1, rel=0.05)

    spectrum = np.abs(np.fft.fft(out.x)) ** 2
    freqs = np.fft.fftfreq(len(out), 1 / fs)
    outside = np.abs(freqs - 0.15 * fs) > 0.1 * fs + fs / len(out)
    assert np.max(spectrum[outside]) < 1e-12 * np.max(spectrum)


def test_invalid_noise_config():
    with pytest.raises(ConfigError, match="trusted_loss_tau"):
        detect(_silence(8), NoiseConfig(trusted_loss_tau=0.0), seed=0)


def test_detector_noise_is_independent():
    out = detect(_silence(2 ** 16), NoiseConfig(electronic_noise=0.01), seed=11)
    x, y = out.x.real, out.y.real
    # 1/sqrt(n) is about 0.004
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.02
    assert abs(np.corrcoef(x, out.x.imag)[0, 1]) < 0.02
    assert abs(np.corrcoef(x[:-1], x[1:])[0, 1]) < 0.02
    assert abs(np.corrcoef(y[:-1], y[1:])[0, 1]) < 0.02
