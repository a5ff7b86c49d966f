import logging

import numpy as np
import pytest

from collectors.txgen import DualPolWaveform
from models.estimator_ukf import (
    EstimateTrack, UkfConfig, UkfState, coarse_pilot_state, compensate, configure_from_pilot,
    derotate, measurement_model, predict, run_ukf, sigma_points, update,
)
from tests.conftest import rotated_pilot
from utils.errors import CovarianceError, DegenerateEstimateError

FS = 120e6
F_PILOT = 48e6


def _cfg(**kwargs):
    base = dict(pilot_freq=F_PILOT, sample_rate=FS, r_meas=1e-2, p_sig=1.0)
    base.update(kwargs)
    return UkfConfig(**base)


def _state():
    return UkfState(np.array([0.9, 0.2, 0.5]), np.diag([0.02, 0.03, 0.1]) + 0.001)


def _track(n, theta, phi):
    a = np.full(n, np.cos(theta))
    b = np.full(n, np.sin(theta))
    return EstimateTrack(
        index=np.arange(n), a=a, b=b, phi=np.full(n, phi),
        var_a=np.zeros(n), var_b=np.zeros(n), var_phi=np.zeros(n),
    )


def test_sigma_points_reconstruct_moments():
    cfg = _cfg()
    state = _state()
    points, wm, wc = sigma_points(state, cfg)
    assert points.shape == (7, 3)
    assert np.sum(wm) == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(wm @ points, state.mean, atol=1e-8)
    dx = points - state.mean
    cov = (wc[:, None] * dx).T @ dx
    assert np.allclose(cov, state.cov, atol=1e-10)


def test_sigma_points_reject_indefinite_covariance():
    state = UkfState(np.zeros(3), np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(CovarianceError):
        sigma_points(state, _cfg())


def test_predict_adds_process_noise():
    state = _state()
    assert np.array_equal(predict(state, _cfg(q_ab=0.0, q_phi=0.0)).cov, state.cov)
    out = predict(state, _cfg(q_ab=1e-3, q_phi=2e-3))
    assert np.array_equal(out.mean, state.mean)
    assert np.trace(out.cov) - np.trace(state.cov) == pytest.approx(4e-3, abs=1e-15)


def test_measurement_model_examples():
    cfg = _cfg(p_sig=4.0)
    assert np.allclose(measurement_model(np.array([1.0, 0.0, 0.0]), 0, cfg), [2.0, 0.0])
    assert np.allclose(measurement_model(np.array([0.0, 1.0, np.pi]), 0, cfg), [0.0, 2.0])
    k = 3
    x = np.array([0.6, 0.8, 0.1])
    carrier = 2.0 * np.cos(cfg.omega * k + 0.1)
    assert np.allclose(measurement_model(x, k, cfg), [0.6 * carrier, -0.8 * carrier])


def test_huge_measurement_noise_leaves_prior():
    state = _state()
    out = update(state, [5.0, -5.0], 0, _cfg(r_meas=1e12))
    assert np.allclose(out.mean, state.mean, atol=1e-6)
    assert np.allclose(out.cov, state.cov, atol=1e-9)


def test_update_rejects_nonpositive_noise():
    with pytest.raises(CovarianceError):
        update(_state(), [0.0, 0.0], 0, _cfg(r_meas=0.0))


def test_linear_model_matches_kalman_update():
    cfg = _cfg(r_meas=0.05)
    state = _state()
    h = np.array([[1.0, 0.5, 0.0], [0.0, -1.0, 2.0]])
    y = np.array([0.3, -0.7])
    out = update(state, y, 0, cfg, hx=lambda x, k: h @ x)

    s = h @ state.cov @ h.T + 0.05 * np.eye(2)
    gain = state.cov @ h.T @ np.linalg.inv(s)
    mean = state.mean + gain @ (y - h @ state.mean)
    cov = state.cov - gain @ s @ gain.T
    assert np.allclose(out.mean, mean, atol=1e-8)
    assert np.allclose(out.cov, cov, atol=1e-8)
    assert np.trace(out.cov) < np.trace(state.cov)
    assert np.array_equal(out.cov, out.cov.T)


def test_static_rotation_converges():
    n = 5000
    pilot = rotated_pilot(n, 0.3, 0.4, F_PILOT, FS)
    cfg = _cfg(r_meas=1e-4, init_mean=np.array([1.0, 0.0, 0.3]), init_cov=np.diag([0.1, 0.1, 0.1]))
    track = run_ukf(pilot, cfg)
    assert len(track) == n
    assert track.rotation_angle()[-1] == pytest.approx(0.3, abs=0.01)
    assert track.phi[-1] == pytest.approx(0.4, abs=0.01)
    assert np.all(track.var_phi > 0)


def test_kernel_matches_step_api(rng):
    n = 200
    pilot = rotated_pilot(n, 0.2, -0.3, F_PILOT, FS)
    pilot = pilot.with_streams(pilot.x + 0.05 * rng.standard_normal(n),
                               pilot.y + 0.05 * rng.standard_normal(n))
    cfg = _cfg(q_ab=1e-6, q_phi=1e-5, init_mean=np.array([1.0, 0.1, -0.2]))
    track = run_ukf(pilot, cfg, start=17)

    state = cfg.initial_state()
    for i in range(n):
        state = update(predict(state, cfg), [pilot.x[i].real, pilot.y[i].real], 17 + i, cfg)
    assert track.a[-1] == pytest.approx(state.mean[0], abs=1e-8)
    assert track.b[-1] == pytest.approx(state.mean[1], abs=1e-8)
    assert track.phi[-1] == pytest.approx(state.mean[2], abs=1e-8)
    assert track.var_phi[-1] == pytest.approx(state.cov[2, 2], abs=1e-10)


def test_decimated_track():
    pilot = rotated_pilot(1000, 0.1, 0.2, F_PILOT, FS)
    track = run_ukf(pilot, _cfg(decimation=10, init_mean=np.array([1.0, 0.1, 0.2])))
    assert len(track) == 100
    assert np.array_equal(track.index, np.arange(0, 1000, 10))
    a, _, _ = track.at(1000)
    assert a.shape == (1000,)


def test_wiener_phase_is_tracked(rng):
    n = 200_000
    q_phi = 2 * np.pi * 200.0 / FS
    phi = 0.5 + np.concatenate(([0.0], np.cumsum(rng.normal(0.0, np.sqrt(q_phi), n - 1))))
    carrier = np.cos(2 * np.pi * F_PILOT / FS * np.arange(n) + phi)
    y1 = np.cos(0.25) * carrier + 0.1 * rng.standard_normal(n)
    y2 = -np.sin(0.25) * carrier + 0.1 * rng.standard_normal(n)
    pilot = DualPolWaveform(y1.astype(complex), y2.astype(complex), FS)

    cfg = _cfg(q_phi=q_phi, init_mean=np.array([np.cos(0.25), np.sin(0.25), 0.5]))
    track = run_ukf(pilot, cfg)
    residual = np.angle(np.exp(1j * (track.phi - phi)))[10_000:]
    assert np.std(residual) < 0.05
    assert abs(np.mean(residual)) < 0.05


def test_coarse_pilot_state():
    pilot = rotated_pilot(4096, 0.3, 1.0, F_PILOT, FS, amplitude=2.0)
    mean, power = coarse_pilot_state(pilot, F_PILOT)
    assert np.allclose(mean, [np.cos(0.3), np.sin(0.3), 1.0], atol=1e-9)
    assert power == pytest.approx(4.0, rel=1e-9)

    flipped, _ = coarse_pilot_state(rotated_pilot(4096, 2.5, 1.0, F_PILOT, FS), F_PILOT)
    assert flipped[0] > 0
    assert np.allclose(flipped, [-np.cos(2.5), -np.sin(2.5), 1.0 + np.pi], atol=1e-9)


def test_configure_from_pilot():
    pilot = rotated_pilot(8192, 0.3, 1.0, F_PILOT, FS, amplitude=2.0)
    cfg = configure_from_pilot(UkfConfig(), pilot, F_PILOT, noise_var=0.02)
    assert cfg.r_meas == 0.02
    assert cfg.p_sig == pytest.approx(4.0)
    assert cfg.omega == pytest.approx(2 * np.pi * 0.4)
    assert cfg.init_mean[2] == pytest.approx(1.0)

    fixed = configure_from_pilot(UkfConfig(init_from_pilot=False), pilot, F_PILOT, 0.02, p_sig=3.0)
    assert fixed.p_sig == 3.0
    assert np.array_equal(fixed.init_mean, [1.0, 0.0, 0.0])


def test_compensation_inverts_true_channel(rng):
    n = 1000
    s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    theta, phi = 0.4, -1.1
    quantum = DualPolWaveform(np.cos(theta) * s * np.exp(1j * phi),
                              -np.sin(theta) * s * np.exp(1j * phi), FS)
    x, y = derotate(quantum, _track(n, theta, phi))
    assert np.allclose(x, s, atol=1e-9)
    assert np.allclose(y, 0.0, atol=1e-9)
    total = np.abs(x) ** 2 + np.abs(y) ** 2
    assert np.allclose(total, np.abs(quantum.x) ** 2 + np.abs(quantum.y) ** 2, rtol=1e-12)


def test_unnormalized_estimate_matches_unit_one(rng):
    n = 64
    s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    quantum = DualPolWaveform(s, 0.5 * s, FS)
    unit = _track(n, 0.0, 0.0)
    doubled = _track(n, 0.0, 0.0)
    doubled.a = 2 * doubled.a
    assert np.allclose(compensate(quantum, doubled), compensate(quantum, unit))


def test_degenerate_estimate():
    n = 8
    track = _track(n, 0.0, 0.0)
    track.a = np.zeros(n)
    quantum = DualPolWaveform(np.ones(n, dtype=complex), np.zeros(n, dtype=complex), FS)
    with pytest.raises(DegenerateEstimateError):
        compensate(quantum, track)


def test_state_check():
    _state().check()
    lopsided = UkfState(np.zeros(3), np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(CovarianceError, match="symmetry"):
        lopsided.check()
    with pytest.raises(CovarianceError, match="positive definite"):
        UkfState(np.zeros(3), np.diag([1.0, -1e-3, 1.0])).check()


def test_update_checks_posterior_under_debug(caplog):
    caplog.set_level(logging.DEBUG, logger="models.estimator_ukf")
    cfg = _cfg()
    out = update(predict(_state(), cfg), [0.5, -0.1], 3, cfg)
    assert np.linalg.eigvalsh(out.cov).min() > 0


@pytest.mark.parametrize("offset", [0.7, -1.2])
def test_rotation_offset_carries_through(offset):
    n = 5000
    theta = 0.2
    init_cov = np.diag([0.05, 0.05, 0.1])
    base = run_ukf(rotated_pilot(n, theta, 0.4, F_PILOT, FS),
                   _cfg(init_mean=np.array([1.0, 0.0, 0.3]), init_cov=init_cov))
    turned = run_ukf(rotated_pilot(n, theta + offset, 0.4, F_PILOT, FS),
                     _cfg(init_mean=np.array([np.cos(offset), np.sin(offset), 0.3]), init_cov=init_cov))
    shift = np.angle(np.exp(1j * (turned.rotation_angle() - base.rotation_angle() - offset)))
    assert np.max(np.abs(shift)) < 0.02
    assert np.allclose(turned.phi, base.phi, atol=0.02)
