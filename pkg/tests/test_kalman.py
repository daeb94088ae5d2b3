import math

import numpy as np
import pytest

from navadi import geodesy
from navadi.errors import (CovarianceNotPSD, EmptyStream,
                           InnovationGateExceeded)
from navadi.geodesy import GeodeticPosition
from navadi.kalman import (ATT, BA, BG, POS, VEL, AidingMeasurement,
                           ErrorState15, KalmanConfig, correct_output,
                           ensure_covariance, gain_update, predict,
                           run_integration, system_matrix, update)
from navadi.mechanization import NavState
from navadi.scenario import ScenarioSpec, generate
from navadi.trajectory import local_tangent_offset


def _nav(lat=0.0, lon=0.0, h=0.0, v=(0.0, 0.0, 0.0), c=None, t=0.0):
    if c is None:
        c = np.eye(3)
    return NavState(GeodeticPosition(lat, lon, h), np.array(v, float), c, t)


def _meas_from_nav(nav, t=None, pos_std=0.05, vel_std=0.05):
    return AidingMeasurement(
        pos=nav.pos, v_eb_n=nav.v_eb_n.copy(),
        timestamp=nav.timestamp if t is None else t,
        pos_std=np.full(3, pos_std), vel_std=np.full(3, vel_std))


# --- system matrix --------------------------------------------------------------

def test_system_matrix_velocity_attitude_block_at_rest():
    nav = _nav()
    g = geodesy.gravity_ned(nav.pos)
    f_ib_n = -g  # stationary: specific force balances gravity
    f = system_matrix(nav, f_ib_n)
    assert np.allclose(f[VEL, ATT], -geodesy.skew([0.0, 0.0, -g[2]]), atol=1e-15)


def test_system_matrix_attitude_rows_structure():
    nav = _nav(lat=0.7, v=(3.0, -1.0, 0.2))
    f = system_matrix(nav, np.zeros(3))
    assert np.array_equal(f[ATT, POS], np.zeros((3, 3)))
    assert np.array_equal(f[ATT, VEL], np.zeros((3, 3)))
    assert np.array_equal(f[ATT, BA], np.zeros((3, 3)))
    assert np.array_equal(f[ATT, BG], nav.c_b_n)


def test_system_matrix_bias_rows_zero():
    nav = _nav(lat=0.3, v=(5.0, 2.0, -1.0),
               c=geodesy.euler_to_matrix(0.1, 0.2, 0.3))
    f = system_matrix(nav, np.array([1.0, -2.0, -9.0]))
    assert np.array_equal(f[BA, :], np.zeros((3, 15)))
    assert np.array_equal(f[BG, :], np.zeros((3, 15)))


def test_system_matrix_accel_bias_coupling():
    c = geodesy.euler_to_matrix(0.2, -0.1, 0.9)
    nav = _nav(lat=0.5, c=c)
    f = system_matrix(nav, np.zeros(3))
    assert np.array_equal(f[VEL, BA], c)


# --- predict -----------------------------------------------------------------------

def test_predict_identity_when_f_and_q_zero():
    x = ErrorState15(np.arange(15.0))
    p = np.diag(np.linspace(1.0, 2.0, 15))
    x2, p2 = predict(x, p, np.zeros((15, 15)), np.zeros((15, 15)), 0.1)
    assert np.array_equal(x2.x, x.x)
    assert np.allclose(p2, p, atol=0)


def test_predict_zero_state_stays_zero():
    rng = np.random.default_rng(5)
    f = rng.normal(size=(15, 15))
    x2, _ = predict(ErrorState15.zero(), np.eye(15), f, np.eye(15) * 1e-6, 0.01)
    assert np.array_equal(x2.x, np.zeros(15))


def test_predict_scalar_recursion_oracle():
    # scalar analog f=-1, q=0, p0=1, tau=0.1, 10 steps -> p = 0.9^20
    f = np.zeros((15, 15))
    f[0, 0] = -1.0
    p = np.zeros((15, 15))
    p[0, 0] = 1.0
    x = ErrorState15.zero()
    for _ in range(10):
        x, p = predict(x, p, f, np.zeros((15, 15)), 0.1)
    assert math.isclose(p[0, 0], 0.12157665459056929, rel_tol=1e-12)


def test_predict_enforces_symmetry():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(15, 15))
    p = a @ a.T + 15.0 * np.eye(15)
    f = rng.normal(size=(15, 15)) * 0.1
    _, p2 = predict(ErrorState15.zero(), p, f, np.eye(15) * 1e-3, 0.05)
    assert np.abs(p2 - p2.T).max() < 1e-12
    assert np.linalg.eigvalsh(p2)[0] > 0.0


def test_ensure_covariance_rejects_indefinite():
    p = np.diag(np.concatenate([[-1.0], np.ones(14)]))
    with pytest.raises(CovarianceNotPSD):
        ensure_covariance(p)


# --- update -------------------------------------------------------------------------

def test_update_zero_innovation_keeps_state_shrinks_p():
    nav = _nav(lat=0.5, h=10.0, t=1.0)
    meas = _meas_from_nav(nav)
    x = ErrorState15.zero()
    p = KalmanConfig().initial_covariance()
    x2, p2 = update(x, p, meas, nav)
    assert np.allclose(x2.x, np.zeros(15), atol=1e-15)
    assert np.trace(p2) < np.trace(p)


def test_update_huge_noise_is_no_op():
    nav = _nav(lat=0.5, t=2.0)
    meas = AidingMeasurement(
        pos=GeodeticPosition(0.5 + 1e-7, 0.0, 1.0),
        v_eb_n=np.array([0.3, 0.0, 0.0]), timestamp=2.0,
        pos_std=np.full(3, 1e9), vel_std=np.full(3, 1e9))
    x = ErrorState15(np.full(15, 0.1))
    p = KalmanConfig().initial_covariance()
    x2, p2 = update(x, p, meas, nav, gate_chi2=np.inf)
    assert np.abs(x2.x - x.x).max() < 1e-9 * max(1.0, np.abs(x.x).max())
    assert np.abs(p2 - p).max() < 1e-9 * np.abs(p).max()


def test_gain_update_scalar_oracle():
    # p=1, r=1, innovation 1 -> gain 0.5, updated p = 0.5 (Joseph form)
    x2, p2 = gain_update(np.zeros(1), np.eye(1), np.eye(1), np.eye(1),
                         np.array([1.0]))
    assert x2[0] == 0.5
    assert p2[0, 0] == 0.5


def test_update_gate_rejects_outlier():
    nav = _nav(t=3.0)
    bad = AidingMeasurement(
        pos=GeodeticPosition(1e-4, 0.0, 50.0),  # ~hundreds of meters off
        v_eb_n=np.zeros(3), timestamp=3.0,
        pos_std=np.full(3, 0.05), vel_std=np.full(3, 0.05))
    x = ErrorState15.zero()
    p = KalmanConfig().initial_covariance()
    with pytest.raises(InnovationGateExceeded):
        update(x, p, bad, nav)


def test_update_requires_time_alignment():
    nav = _nav(t=1.0)
    meas = _meas_from_nav(nav, t=1.5)
    with pytest.raises(ValueError):
        update(ErrorState15.zero(), KalmanConfig().initial_covariance(), meas, nav)


# --- output correction -----------------------------------------------------------------

def test_correct_output_zero_error():
    nav = _nav(lat=0.6, h=20.0, v=(1.0, 2.0, 3.0),
               c=geodesy.euler_to_matrix(0.1, 0.0, 0.4), t=5.0)
    out = correct_output(nav, ErrorState15.zero())
    assert out.pos == nav.pos
    assert np.array_equal(out.v_eb_n, nav.v_eb_n)
    assert np.allclose(out.c_b_n, nav.c_b_n, atol=1e-15)


def test_correct_output_height_subtraction():
    nav = _nav(h=100.0)
    x = ErrorState15.zero()
    x.x[2] = 0.5
    out = correct_output(nav, x)
    assert math.isclose(out.pos.height, 99.5, abs_tol=0)
    assert out.pos.lat == nav.pos.lat


def test_correct_output_small_yaw_error():
    nav = _nav(c=geodesy.euler_to_matrix(0.0, 0.0, 0.3))
    x = ErrorState15.zero()
    x.x[8] = 1e-3
    out = correct_output(nav, x)
    _, _, yaw = geodesy.matrix_to_euler(out.c_b_n)
    assert math.isclose(yaw - 0.3, -1e-3, abs_tol=1e-9)
    assert np.abs(out.c_b_n.T @ out.c_b_n - np.eye(3)).max() < 1e-12


def test_correct_output_does_not_touch_input():
    nav = _nav(h=10.0, v=(1.0, 0.0, 0.0))
    h_before = nav.pos.height
    v_before = nav.v_eb_n.copy()
    x = ErrorState15(np.full(15, 0.01))
    correct_output(nav, x)
    assert nav.pos.height == h_before
    assert np.array_equal(nav.v_eb_n, v_before)


# --- full integration -------------------------------------------------------------------

def _stationary_spec(**kw):
    base = dict(kind="stationary", duration=30.0, imu_rate=100.0,
                aiding_rate=1.0, seed=2)
    base.update(kw)
    return ScenarioSpec(**base)


def test_run_integration_empty_imu_stream():
    with pytest.raises(EmptyStream):
        run_integration(_nav(), [], [])


def test_run_integration_without_aiding_equals_mechanization():
    sim = generate(_stationary_spec(duration=5.0), clouds=False)
    res = run_integration(sim.initial_state, sim.imu, [])
    for c, r in zip(res.corrected_states, res.raw_states):
        assert c.pos == r.pos
        assert np.array_equal(c.v_eb_n, r.v_eb_n)
    assert len(res.innovations) == 0


def test_run_integration_open_loop_raw_stream_identical():
    sim = generate(_stationary_spec(duration=5.0, accel_bias=np.full(3, 0.02)),
                   clouds=False)
    with_aiding = run_integration(sim.initial_state, sim.imu, sim.aiding)
    without = run_integration(sim.initial_state, sim.imu, [])
    for a, b in zip(with_aiding.raw_states, without.raw_states):
        assert a.pos.lat == b.pos.lat and a.pos.lon == b.pos.lon
        assert a.pos.height == b.pos.height
        assert np.array_equal(a.v_eb_n, b.v_eb_n)
        assert np.array_equal(a.c_b_n, b.c_b_n)


def test_run_integration_noiseless_stationary_stays_put():
    sim = generate(_stationary_spec(duration=60.0, aiding_pos_std=1e-4,
                                    aiding_vel_std=1e-4), clouds=False)
    res = run_integration(sim.initial_state, sim.imu, sim.aiding)
    final = res.corrected_states[-1]
    err = local_tangent_offset(final.pos, sim.initial_state.pos)
    assert np.linalg.norm(err) < 0.01


def test_run_integration_aiding_shrinks_error():
    spec = _stationary_spec(duration=60.0, accel_noise=1e-2, gyro_noise=1e-4,
                            accel_bias=np.full(3, 0.05),
                            gyro_bias=np.full(3, 1e-4), seed=4)
    sim = generate(spec, clouds=False)
    res = run_integration(sim.initial_state, sim.imu, sim.aiding)
    truth = sim.truth.states[1:]

    def rmse(states):
        e = np.array([local_tangent_offset(s.pos, t.pos)
                      for s, t in zip(states, truth)])
        return float(np.sqrt((e**2).sum(axis=1).mean()))

    assert rmse(res.raw_states) / rmse(res.corrected_states) >= 5.0


def test_run_integration_innovations_zero_mean():
    spec = _stationary_spec(duration=120.0, accel_noise=1e-2, gyro_noise=1e-4,
                            seed=6)
    sim = generate(spec, clouds=False)
    res = run_integration(sim.initial_state, sim.imu, sim.aiding)
    inn = res.innovations
    assert len(inn) >= 100
    bound = 3.0 * inn.std(axis=0) / math.sqrt(len(inn))
    assert np.all(np.abs(inn.mean(axis=0)) < bound)


def test_run_integration_counts_gated_measurements():
    sim = generate(_stationary_spec(duration=5.0), clouds=False)
    bad = AidingMeasurement(
        pos=GeodeticPosition(sim.initial_state.pos.lat + 1e-3,
                             sim.initial_state.pos.lon,
                             sim.initial_state.pos.height),
        v_eb_n=np.zeros(3), timestamp=sim.imu[10].timestamp,
        pos_std=np.full(3, 0.01), vel_std=np.full(3, 0.01))
    res = run_integration(sim.initial_state, sim.imu, [bad])
    assert res.rejected == 1
    # gated measurement leaves the corrected stream on the mechanized path
    ref = run_integration(sim.initial_state, sim.imu, [])
    assert res.corrected_states[-1].pos == ref.corrected_states[-1].pos


def test_covariance_psd_on_sampled_steps():
    spec = _stationary_spec(duration=20.0, accel_noise=1e-2, gyro_noise=1e-4,
                            seed=8)
    sim = generate(spec, clouds=False)
    config = KalmanConfig()
    res = run_integration(sim.initial_state, sim.imu, sim.aiding, config)
    assert np.abs(res.final_p - res.final_p.T).max() < 1e-12
    assert np.linalg.eigvalsh(res.final_p)[0] > -1e-9 * np.abs(res.final_p).max()


def test_kalman_config_from_file(tmp_path):
    cfg_file = tmp_path / "kf.cfg"
    cfg_file.write_text("[kalman]\ngyro_noise_density = 5e-4\ngate_chi2 = 30\n")
    cfg = KalmanConfig.from_file(cfg_file)
    assert cfg.gyro_noise_density == 5e-4
    assert cfg.gate_chi2 == 30.0
    assert cfg.accel_noise_density == KalmanConfig().accel_noise_density
