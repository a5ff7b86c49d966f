import numpy as np
import pytest

from collectors.txgen import DualPolWaveform, TxConfig


@pytest.fixture
def desk_tx():
    """Desk-rate transmitter: 120 MS/s, 6 samples per symbol"""
    return TxConfig(sample_rate=120e6, signal_center_freq=25e6, pilot_freq=48e6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(n, freq, sample_rate, amplitude=1.0, phase=0.0):
    k = np.arange(n)
    return amplitude * np.exp(1j * (2 * np.pi * freq / sample_rate * k + phase))


def rotated_pilot(n, theta, phi, freq, sample_rate, amplitude=1.0):
    """Pilot on x after a rotation R(theta) and a phase phi"""
    carrier = tone(n, freq, sample_rate, amplitude, phi)
    return DualPolWaveform(np.cos(theta) * carrier, -np.sin(theta) * carrier, sample_rate)
